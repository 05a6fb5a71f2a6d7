//! Ground-truth generation, sampling and performance metrics for
//! simulation studies.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::AdmmConfig;
use crate::error::{PdError, Result};
use crate::model::{mle, model_select, ClassSpec, EdgeState, PdColouredGraph};
use crate::paired::{PairedIndex, SymMatrix};

/// Seed of a ChaCha20 stream (`rand_chacha` 0.9, `seed_from_u64`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(self.0)
    }

    /// Independent seed for sub-task `index`, drawn from stream `index + 1`.
    pub fn child(self, index: u64) -> RngSeed {
        let mut rng = self.rng();
        rng.set_stream(index + 1);
        RngSeed(rng.next_u64())
    }
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    // Column-major fill order is part of the reproducibility contract.
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut *rng))
}

fn wishart_with(p: usize, df: usize, rng: &mut ChaCha20Rng) -> Result<SymMatrix> {
    if df < p || p == 0 {
        return Err(PdError::InvalidArgument(format!("Wishart needs df >= p >= 1, got p = {p}, df = {df}")));
    }
    let g = normal_matrix(p, df, rng);
    Ok(SymMatrix::symmetrized(&g * g.transpose()))
}

/// One draw `G G^T` with `G` a `p x df` standard normal matrix.
pub fn wishart_identity(p: usize, df: usize, seed: RngSeed) -> Result<SymMatrix> {
    wishart_with(p, df, &mut seed.rng())
}

/// Uncoloured graph on the `ceil(density * p(p-1)/2)` largest off-diagonal
/// `|K_ij|`; ties go to the earlier row-major position.
pub fn graph_from_threshold(k: &SymMatrix, density: f64) -> Result<PdColouredGraph> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(PdError::InvalidArgument(format!("density must lie in (0, 1], got {density}")));
    }
    let idx = PairedIndex::from_dim(k.dim())?;
    let p = k.dim();
    let mut entries: Vec<(usize, usize, f64)> =
        (0..p).flat_map(|i| (i + 1..p).map(move |j| (i, j))).map(|(i, j)| (i, j, k.get(i, j).abs())).collect();
    let count = edge_count(p, density);
    entries.sort_by(|a, b| b.2.total_cmp(&a.2));
    let edges: Vec<(usize, usize)> = entries[..count].iter().map(|&(i, j, _)| (i, j)).collect();
    PdColouredGraph::from_edges(idx, &edges)
}

fn edge_count(p: usize, density: f64) -> usize {
    let total = p * (p - 1) / 2;
    // Guard against products like 0.2 * 190 = 38.000000000000004.
    ((density * total as f64 - 1e-9).ceil() as usize).clamp(1, total)
}

/// A simulated model: covariance, concentration and graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub sigma: SymMatrix,
    /// Exactly adapted to `graph`.
    pub theta: SymMatrix,
    pub graph: PdColouredGraph,
}

/// Colours a `fraction` share of the eligible positions.
///
/// Eligible are all vertex pairs plus the inside and across pairs with at
/// least one edge. The budget is split across the three pools in
/// proportion to their sizes (largest remainder); chosen pairs get both
/// edges and a colour.
pub fn inject_symmetries(g: &mut PdColouredGraph, fraction: f64, rng: &mut ChaCha20Rng) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(PdError::InvalidArgument(format!("symmetry fraction must lie in [0, 1], got {fraction}")));
    }
    let pools: [Vec<usize>; 3] = [
        (0..g.q).collect(),
        (0..g.inside.len()).filter(|&k| g.inside[k] != EdgeState::Absent).collect(),
        (0..g.across.len()).filter(|&k| g.across[k] != EdgeState::Absent).collect(),
    ];
    let total: usize = pools.iter().map(Vec::len).sum();
    let target = (fraction * total as f64).round() as usize;
    if target == 0 {
        return Ok(());
    }
    let quotas: Vec<f64> = pools.iter().map(|pool| target as f64 * pool.len() as f64 / total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
    let mut left = target - counts.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if counts[k] < pools[k].len() {
            counts[k] += 1;
            left -= 1;
        }
    }
    for (f, (pool, &count)) in pools.iter().zip(&counts).enumerate() {
        if count == 0 {
            continue;
        }
        for pick in sample(rng, pool.len(), count) {
            let k = pool[pick];
            match f {
                0 => g.vertex_coloured[k] = true,
                1 => g.inside[k] = EdgeState::Coloured,
                _ => g.across[k] = EdgeState::Coloured,
            }
        }
    }
    Ok(())
}

/// Iteration floor of the ground-truth refit.
const TRUTH_MIN_OUTER: usize = 100_000;

/// Wishart draw, threshold graph, symmetry injection and constrained MLE
/// refit, in that order, from one stream.
pub fn simulate_truth(
    p: usize,
    density: f64,
    symmetry_fraction: f64,
    seed: RngSeed,
    cfg: &AdmmConfig,
) -> Result<Truth> {
    if p < 2 {
        return Err(PdError::InvalidArgument(format!("need p >= 2, got {p}")));
    }
    let mut rng = seed.rng();
    let s_star = wishart_with(p, p, &mut rng)?;
    let mut graph = graph_from_threshold(&s_star.inverse_pd()?, density)?;
    inject_symmetries(&mut graph, symmetry_fraction, &mut rng)?;
    // Wishart draws at df = p are often badly conditioned.
    let refit = AdmmConfig { max_outer: cfg.max_outer.max(TRUTH_MIN_OUTER), ..*cfg };
    let theta = mle(&s_star, &graph, &refit)?;
    let sigma = theta.inverse_pd()?;
    Ok(Truth { sigma, theta, graph })
}

/// Covariance of a random GGM with the given density.
pub fn ggm_covariance(p: usize, density: f64, seed: RngSeed, cfg: &AdmmConfig) -> Result<(SymMatrix, PdColouredGraph)> {
    let t = simulate_truth(p, density, 0.0, seed, cfg)?;
    Ok((t.sigma, t.graph))
}

/// Covariance of a random pdRCON model described by `spec`.
pub fn pdrcon_covariance(spec: &ScenarioSpec, cfg: &AdmmConfig) -> Result<(SymMatrix, PdColouredGraph)> {
    spec.validate()?;
    let t = simulate_truth(spec.p, spec.density, spec.symmetry_fraction, RngSeed(spec.seed), cfg)?;
    Ok((t.sigma, t.graph))
}

fn sym_sqrt(sigma: &SymMatrix) -> Result<DMatrix<f64>> {
    let eig = sigma.as_matrix().clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(PdError::NotPositiveDefinite);
    }
    let root = eig.eigenvalues.map(f64::sqrt);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// `n^{-1} sum y y^T` over `n` draws `y = Sigma^{1/2} z`.
pub fn mvn_sample_cov(sigma: &SymMatrix, n: usize, seed: RngSeed) -> Result<SymMatrix> {
    mvn_sample_cov_with(sigma, n, &mut seed.rng())
}

fn mvn_sample_cov_with(sigma: &SymMatrix, n: usize, rng: &mut ChaCha20Rng) -> Result<SymMatrix> {
    if n == 0 {
        return Err(PdError::InvalidArgument("n must be >= 1".into()));
    }
    let root = sym_sqrt(sigma)?;
    let y = normal_matrix(n, sigma.dim(), rng) * root;
    Ok(SymMatrix::symmetrized(y.transpose() * &y / n as f64))
}

/// Edge recovery scores over the `p(p-1)/2` possible edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub ppv: f64,
    pub tpr: f64,
    pub f1: f64,
    pub mcc: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Confusion counts to scores; every `0/0` is 0.
pub fn metrics_from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> EdgeMetrics {
    let (t, f, n, r) = (tp as f64, fp as f64, fn_ as f64, tn as f64);
    let ppv = ratio(t, t + f);
    let tpr = ratio(t, t + n);
    let f1 = ratio(2.0 * ppv * tpr, ppv + tpr);
    let mcc = ratio(t * r - f * n, ((t + f) * (t + n) * (r + f) * (r + n)).sqrt());
    EdgeMetrics { tp, fp, fn_, tn, ppv, tpr, f1, mcc }
}

pub fn edge_metrics(truth: &PdColouredGraph, est: &PdColouredGraph) -> Result<EdgeMetrics> {
    if truth.q != est.q {
        return Err(PdError::DimensionMismatch { expected: truth.p(), found: est.p() });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (t, e) in truth.adjacency().into_iter().zip(est.adjacency()) {
        match (t, e) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(metrics_from_counts(tp, fp, fn_, tn))
}

/// Estimation losses for a concentration matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixLosses {
    pub frobenius: f64,
    /// `tr(theta_hat Sigma) - log det(theta_hat Sigma) - p`.
    pub entropy: f64,
}

pub fn matrix_losses(theta_hat: &SymMatrix, theta_true: &SymMatrix) -> Result<MatrixLosses> {
    if theta_hat.dim() != theta_true.dim() {
        return Err(PdError::DimensionMismatch { expected: theta_true.dim(), found: theta_hat.dim() });
    }
    let sigma = theta_true.inverse_pd()?;
    let log_ratio = theta_hat.log_det()? - theta_true.log_det()?;
    Ok(MatrixLosses {
        frobenius: (theta_hat - theta_true).frobenius(),
        entropy: theta_hat.trace_product(&sigma) - log_ratio - theta_hat.dim() as f64,
    })
}

fn default_grid_len() -> usize {
    20
}

/// One simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub p: usize,
    pub density: f64,
    /// 0 for a plain GGM, 1 for a fully symmetric model.
    pub symmetry_fraction: f64,
    pub n_list: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    /// Grid length of each selection stage.
    #[serde(default = "default_grid_len")]
    pub grid_len: usize,
    /// eBIC `gamma`.
    #[serde(default)]
    pub gamma: f64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || !self.p.is_multiple_of(2) {
            return Err(PdError::InvalidArgument(format!("p must be even and >= 2, got {}", self.p)));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(PdError::InvalidArgument(format!("density must lie in (0, 1], got {}", self.density)));
        }
        if !(0.0..=1.0).contains(&self.symmetry_fraction) {
            return Err(PdError::InvalidArgument(format!(
                "symmetry fraction must lie in [0, 1], got {}",
                self.symmetry_fraction
            )));
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(PdError::InvalidArgument("sample sizes must be a nonempty list of positive integers".into()));
        }
        if self.replications == 0 || self.grid_len < 2 {
            return Err(PdError::InvalidArgument("need replications >= 1 and grid length >= 2".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(PdError::InvalidArgument(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        if self.symmetry_fraction == 0.0 {
            "no-symmetry".into()
        } else if self.symmetry_fraction == 1.0 {
            "full-symmetry".into()
        } else {
            format!("{}%-symmetry", (100.0 * self.symmetry_fraction).round())
        }
    }
}

/// Estimation method compared in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pdglasso,
    Glasso,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Pdglasso, Method::Glasso];

    pub fn class(self) -> ClassSpec {
        match self {
            Method::Pdglasso => ClassSpec::pdglasso(),
            Method::Glasso => ClassSpec::glasso(),
        }
    }
}

/// One (replication, sample size, method) cell. Failed cells carry NaN
/// scores, no `d` and `converged = false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: String,
    pub n: usize,
    pub rep: usize,
    pub method: Method,
    pub ppv: f64,
    pub tpr: f64,
    pub f1: f64,
    pub mcc: f64,
    pub frob: f64,
    pub entropy: f64,
    pub d: Option<usize>,
    pub ebic: f64,
    pub converged: bool,
}

impl ScenarioRow {
    fn failed(scenario: &str, n: usize, rep: usize, method: Method) -> Self {
        let nan = f64::NAN;
        Self {
            scenario: scenario.to_string(),
            n,
            rep,
            method,
            ppv: nan,
            tpr: nan,
            f1: nan,
            mcc: nan,
            frob: nan,
            entropy: nan,
            d: None,
            ebic: nan,
            converged: false,
        }
    }

    pub fn is_failed(&self) -> bool {
        self.d.is_none()
    }
}

fn run_cell(
    spec: &ScenarioSpec,
    truth: &Truth,
    n: usize,
    rep: usize,
    seed: RngSeed,
    cfg: &AdmmConfig,
) -> Vec<ScenarioRow> {
    let label = spec.label();
    let s = match mvn_sample_cov(&truth.sigma, n, seed) {
        Ok(s) => s,
        Err(_) => return Method::ALL.iter().map(|&m| ScenarioRow::failed(&label, n, rep, m)).collect(),
    };
    Method::ALL
        .iter()
        .map(|&method| {
            let scored = model_select(&s, n, spec.grid_len, spec.gamma, &method.class(), cfg).and_then(|sel| {
                let fit = sel.best;
                let em = edge_metrics(&truth.graph, &fit.graph)?;
                let loss = matrix_losses(&fit.theta_hat, &truth.theta)?;
                Ok(ScenarioRow {
                    scenario: label.clone(),
                    n,
                    rep,
                    method,
                    ppv: em.ppv,
                    tpr: em.tpr,
                    f1: em.f1,
                    mcc: em.mcc,
                    frob: loss.frobenius,
                    entropy: loss.entropy,
                    d: Some(fit.d),
                    ebic: fit.ebic,
                    converged: fit.report.converged,
                })
            });
            scored.unwrap_or_else(|_| ScenarioRow::failed(&label, n, rep, method))
        })
        .collect()
}

/// Runs every (replication, sample size) cell with both methods.
///
/// Replication `r` draws its truth from `seed.child(r).child(0)` and the
/// sample for the `k`-th size from `seed.child(r).child(k + 1)`, so the
/// table does not depend on scheduling. Rows are ordered by replication,
/// sample size, then method.
pub fn run_scenario(spec: &ScenarioSpec, cfg: &AdmmConfig) -> Result<Vec<ScenarioRow>> {
    spec.validate()?;
    cfg.validate()?;
    let master = RngSeed(spec.seed);
    let truths: Vec<Result<Truth>> = (0..spec.replications)
        .into_par_iter()
        .map(|r| simulate_truth(spec.p, spec.density, spec.symmetry_fraction, master.child(r as u64).child(0), cfg))
        .collect();
    let cells: Vec<(usize, usize)> =
        (0..spec.replications).flat_map(|r| (0..spec.n_list.len()).map(move |k| (r, k))).collect();
    let label = spec.label();
    let rows: Vec<Vec<ScenarioRow>> = cells
        .par_iter()
        .map(|&(r, k)| {
            let n = spec.n_list[k];
            match &truths[r] {
                Ok(truth) => run_cell(spec, truth, n, r, master.child(r as u64).child(k as u64 + 1), cfg),
                Err(_) => Method::ALL.iter().map(|&m| ScenarioRow::failed(&label, n, r, m)).collect(),
            }
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Averages over replications for one (scenario, n, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMeans {
    pub scenario: String,
    pub n: usize,
    pub method: Method,
    pub ppv: f64,
    pub tpr: f64,
    pub f1: f64,
    pub mcc: f64,
    pub frob: f64,
    pub entropy: f64,
    pub d: f64,
    pub ebic: f64,
    /// Share of successful cells whose solver converged.
    pub converged: f64,
    /// Cells that produced no fit.
    pub failures: usize,
}

/// Per-cell means over successful replications, ordered by first
/// appearance.
pub fn cell_means(rows: &[ScenarioRow]) -> Vec<CellMeans> {
    let mut keys: Vec<(String, usize, Method)> = Vec::new();
    for r in rows {
        let key = (r.scenario.clone(), r.n, r.method);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(scenario, n, method)| {
            let group: Vec<&ScenarioRow> =
                rows.iter().filter(|r| r.scenario == scenario && r.n == n && r.method == method).collect();
            let ok: Vec<&&ScenarioRow> = group.iter().filter(|r| !r.is_failed()).collect();
            let mean = |f: &dyn Fn(&ScenarioRow) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            CellMeans {
                ppv: mean(&|r| r.ppv),
                tpr: mean(&|r| r.tpr),
                f1: mean(&|r| r.f1),
                mcc: mean(&|r| r.mcc),
                frob: mean(&|r| r.frob),
                entropy: mean(&|r| r.entropy),
                d: mean(&|r| r.d.unwrap_or(0) as f64),
                ebic: mean(&|r| r.ebic),
                converged: mean(&|r| r.converged as u8 as f64),
                failures: group.len() - ok.len(),
                scenario,
                n,
                method,
            }
        })
        .collect()
}

/// `(a - b) / b`.
pub fn relative_difference(a: f64, b: f64) -> f64 {
    (a - b) / b
}
