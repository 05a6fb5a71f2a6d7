use crate::admm::{solve_weighted, surrogate_value, AdmmConfig};
use crate::error::{PdError, Result};
use crate::model::graph::{constraint_weights, PdColouredGraph};
use crate::paired::{log_likelihood, pd_vec, symmetrize_paired, SymMatrix};

/// Constrained maximum likelihood estimate of the concentration matrix
/// under the pdRCON model `g`.
///
/// Absent entries are exactly zero and coloured pairs exactly equal.
pub fn mle(s: &SymMatrix, g: &PdColouredGraph, cfg: &AdmmConfig) -> Result<SymMatrix> {
    g.validate()?;
    let idx = g.index();
    idx.check_dim(s)?;
    let weights = constraint_weights(g, surrogate_value(s, cfg))?;
    if weights.lasso.iter().all(|&w| w == 0.0) && weights.fused.weights().iter().all(|&w| w == 0.0) {
        // Saturated model.
        return s.inverse_pd().map_err(|_| PdError::MleNonexistent("S is singular and the model is saturated".into()));
    }
    let (theta, report) = solve_weighted(s, &weights, cfg)?;
    if !report.converged {
        return Err(PdError::MleNonexistent(format!(
            "solver did not converge in {} iterations",
            report.outer_iterations
        )));
    }
    if report.used_theta_iterate {
        return Err(PdError::MleNonexistent("constrained projection is not positive definite".into()));
    }
    Ok(theta)
}

/// MLE of a fully symmetric model through the GGM MLE of
/// `S_bar = (S + J S J) / 2`.
pub fn mle_fully_symmetric(s: &SymMatrix, g: &PdColouredGraph, cfg: &AdmmConfig) -> Result<SymMatrix> {
    g.validate()?;
    if !g.is_fully_symmetric() {
        return Err(PdError::NotFullySymmetric(
            "every vertex must be coloured and every pair absent or coloured".into(),
        ));
    }
    let idx = g.index();
    let s_bar = symmetrize_paired(s, idx)?;
    let theta = mle(&s_bar, &g.uncoloured(), cfg)?;
    symmetrize_paired(&theta, idx)
}

/// `-n l(theta) + log(n) d + 4 d gamma log(p)`.
pub fn ebic(theta_mle: &SymMatrix, s: &SymMatrix, n: usize, d: usize, gamma: f64) -> Result<f64> {
    if n == 0 {
        return Err(PdError::InvalidArgument("n must be >= 1".into()));
    }
    if !(gamma >= 0.0) {
        return Err(PdError::InvalidArgument(format!("gamma must be >= 0, got {gamma}")));
    }
    let l = log_likelihood(theta_mle, s)?;
    Ok(ebic_from_loglik(l, n, d, gamma, s.dim()))
}

pub(crate) fn ebic_from_loglik(l: f64, n: usize, d: usize, gamma: f64, p: usize) -> f64 {
    let (n, d) = (n as f64, d as f64);
    -n * l + n.ln() * d + 4.0 * d * gamma * (p as f64).ln()
}

/// `-n l(theta)`; differences between nested fits are likelihood ratio
/// statistics.
pub fn deviance(theta: &SymMatrix, s: &SymMatrix, n: usize) -> Result<f64> {
    Ok(-(n as f64) * log_likelihood(theta, s)?)
}

/// `-theta_ij / sqrt(theta_ii theta_jj)` off the diagonal, 1 on it.
pub fn partial_correlations(theta: &SymMatrix) -> Result<SymMatrix> {
    let d = theta.diagonal();
    if d.iter().any(|&v| !(v > 0.0)) {
        return Err(PdError::InvalidArgument("concentration diagonal must be positive".into()));
    }
    let p = theta.dim();
    let mut out = SymMatrix::identity(p);
    for i in 0..p {
        for j in i + 1..p {
            let r = -theta.get(i, j) / (d[i] * d[j]).sqrt();
            out.set(i, j, r);
            out.set(j, i, r);
        }
    }
    Ok(out)
}

/// `1 / theta_ii`.
pub fn partial_variances(theta: &SymMatrix) -> Result<Vec<f64>> {
    let d = theta.diagonal();
    if d.iter().any(|&v| !(v > 0.0)) {
        return Err(PdError::InvalidArgument("concentration diagonal must be positive".into()));
    }
    Ok(d.iter().map(|v| 1.0 / v).collect())
}

/// Largest violation of the pdRCON likelihood equations and constraints.
///
/// Free entries need `(theta^{-1})_ij = s_ij`; a colour class needs the
/// two entries of `theta^{-1} - S` to sum to zero. Absent entries must be
/// exactly zero and coloured pairs exactly equal, otherwise the residual
/// is infinite.
pub fn likelihood_equation_residual(theta: &SymMatrix, s: &SymMatrix, g: &PdColouredGraph) -> Result<f64> {
    g.validate()?;
    let idx = g.index();
    let w = constraint_weights(g, 1.0)?;
    let diff = pd_vec(&(&theta.inverse_pd()? - s), idx)?;
    let x = pd_vec(theta, idx)?;
    let (r, x) = (diff.as_slice(), x.as_slice());
    let mut in_class = vec![false; r.len()];
    let mut worst: f64 = 0.0;
    for (row, &(a, b)) in w.fused.rows().iter().enumerate() {
        if !w.fused_hard[row] {
            continue;
        }
        if x[a] != x[b] {
            return Ok(f64::INFINITY);
        }
        in_class[a] = true;
        in_class[b] = true;
        worst = worst.max((r[a] + r[b]).abs());
    }
    for k in 0..r.len() {
        if w.lasso_hard[k] {
            if x[k] != 0.0 {
                return Ok(f64::INFINITY);
            }
        } else if !in_class[k] {
            worst = worst.max(r[k].abs());
        }
    }
    Ok(worst)
}
