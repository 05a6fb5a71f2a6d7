//! Fixtures shared by the benchmarks.

use pdglasso::simulate::{mvn_sample_cov, simulate_truth, RngSeed};
use pdglasso::{AdmmConfig, SymMatrix};

/// Sample covariance of `n` draws from a half-symmetric sparse model on `p`
/// variables.
pub fn sample_cov(p: usize, n: usize, seed: u64) -> SymMatrix {
    let truth = simulate_truth(p, 0.2, 0.5, RngSeed(seed), &AdmmConfig::default()).expect("valid truth");
    mvn_sample_cov(&truth.sigma, n, RngSeed(seed).child(1)).expect("valid sample")
}
