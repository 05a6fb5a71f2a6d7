//! Nested ADMM for the paired-data graphical lasso.
//!
//! The outer loop splits the problem into a log-det proximal step for
//! `Theta`, a penalized step for `Z` and a scaled dual update for `U`. The
//! `Z` step is a fused-lasso signal approximator over the block-ordered
//! half-vectorization; it is solved by an inner ADMM over the fused
//! difference operator and finished with a soft threshold.

use serde::{Deserialize, Serialize};

use crate::error::{PdError, Result};
use crate::paired::{log_likelihood, pd_unvec, pd_vec, PairedIndex, PdVec, SymMatrix};
use crate::penalty::PenaltySpec;

/// Balance factor for adaptive step sizes.
const BALANCE_MU: f64 = 10.0;
/// Step-size multiplier for adaptive step sizes.
const BALANCE_TAU: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    /// Outer step size.
    pub rho1: f64,
    /// Inner step size.
    pub rho2: f64,
    /// Residual balancing of both step sizes.
    pub adaptive: bool,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// `Infinite` penalties become `factor * max(1, max |s_ij|)`.
    pub inf_surrogate_factor: f64,
    /// Relative tolerance of the final zero / fusion clean-up.
    pub polish_tol: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho1: 1.0,
            rho2: 1.0,
            adaptive: true,
            eps_abs: 1e-8,
            eps_rel: 1e-8,
            max_outer: 5000,
            max_inner: 1000,
            inf_surrogate_factor: 1e4,
            polish_tol: 1e-10,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.rho1, self.rho2, self.eps_abs, self.eps_rel, self.inf_surrogate_factor];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(PdError::InvalidArgument("ADMM step sizes, tolerances and surrogate must be positive".into()));
        }
        if self.eps_abs > 1e-2 || self.eps_rel > 1e-2 {
            return Err(PdError::InvalidArgument("ADMM tolerances must be <= 1e-2".into()));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(PdError::InvalidArgument("iteration limits must be positive".into()));
        }
        if !(self.polish_tol >= 0.0) {
            return Err(PdError::InvalidArgument("polish_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Which of the three symmetry families a fused row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusedKind {
    Vertex,
    Inside,
    Across,
}

/// Sparse representation of the fused difference matrix `F`.
///
/// Row `r` maps a [`PdVec`] `v` to `v[a_r] - v[b_r]`. Rows are listed as
/// `q` vertex pairs, then `s` inside pairs, then `s` across pairs; each
/// coordinate appears in at most one row and the `diag(LR)` segment in none.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedDiffOperator {
    idx: PairedIndex,
    rows: Vec<(usize, usize)>,
    kinds: Vec<FusedKind>,
    weights: Vec<f64>,
}

impl FusedDiffOperator {
    /// Full operator with one weight per family.
    pub fn new(idx: PairedIndex, vertex: f64, inside: f64, across: f64) -> Self {
        let lay = idx.layout();
        let (q, s) = (idx.q(), idx.s());
        let mut rows = Vec::with_capacity(q + 2 * s);
        let mut kinds = Vec::with_capacity(q + 2 * s);
        let mut weights = Vec::with_capacity(q + 2 * s);
        for i in 0..q {
            rows.push((lay.diag_ll + i, lay.diag_rr + i));
            kinds.push(FusedKind::Vertex);
            weights.push(vertex);
        }
        for k in 0..s {
            rows.push((lay.upper_ll + k, lay.upper_rr + k));
            kinds.push(FusedKind::Inside);
            weights.push(inside);
        }
        for k in 0..s {
            rows.push((lay.upper_lr + k, lay.upper_rl + k));
            kinds.push(FusedKind::Across);
            weights.push(across);
        }
        Self { idx, rows, kinds, weights }
    }

    pub fn index(&self) -> PairedIndex {
        self.idx
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[(usize, usize)] {
        &self.rows
    }

    pub fn kinds(&self) -> &[FusedKind] {
        &self.kinds
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Operator restricted to rows with a positive weight.
    pub fn active(&self) -> FusedDiffOperator {
        let keep: Vec<usize> = (0..self.rows.len()).filter(|&r| self.weights[r] > 0.0).collect();
        FusedDiffOperator {
            idx: self.idx,
            rows: keep.iter().map(|&r| self.rows[r]).collect(),
            kinds: keep.iter().map(|&r| self.kinds[r]).collect(),
            weights: keep.iter().map(|&r| self.weights[r]).collect(),
        }
    }

    /// `F v` without materializing `F`.
    pub fn apply(&self, v: &PdVec) -> Result<Vec<f64>> {
        if v.len() != self.idx.vec_len() {
            return Err(PdError::DimensionMismatch { expected: self.idx.vec_len(), found: v.len() });
        }
        Ok(self.apply_slice(v.as_slice()))
    }

    fn apply_slice(&self, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|&(a, b)| v[a] - v[b]).collect()
    }

    /// `F^T y`.
    pub fn apply_transpose(&self, y: &[f64]) -> Result<PdVec> {
        if y.len() != self.rows.len() {
            return Err(PdError::DimensionMismatch { expected: self.rows.len(), found: y.len() });
        }
        let mut out = PdVec::zeros(self.idx);
        let o = out.as_mut_slice();
        for (&(a, b), &yr) in self.rows.iter().zip(y) {
            o[a] += yr;
            o[b] -= yr;
        }
        Ok(out)
    }
}

/// `sign(x) * max(|x| - t, 0)`.
pub fn soft_threshold(x: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(PdError::InvalidArgument(format!("threshold must be >= 0, got {t}")));
    }
    Ok(shrink(x, t))
}

#[inline]
fn shrink(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Analytic minimizer of `-log det T + tr(S T) + rho1/2 ||T - Z + U||_F^2`.
pub fn theta_step(s: &SymMatrix, z: &SymMatrix, u: &SymMatrix, rho1: f64) -> Result<SymMatrix> {
    if !(rho1 > 0.0) {
        return Err(PdError::InvalidArgument(format!("rho1 must be > 0, got {rho1}")));
    }
    let p = s.dim();
    for m in [z, u] {
        if m.dim() != p {
            return Err(PdError::DimensionMismatch { expected: p, found: m.dim() });
        }
    }
    let target = (z.as_matrix() - u.as_matrix()) * rho1 - s.as_matrix();
    if target.iter().any(|v| !v.is_finite()) {
        return Err(PdError::EigenFailure);
    }
    let eig = target.symmetric_eigen();
    let scaled = eig.eigenvalues.map(|d| (d + (d * d + 4.0 * rho1).sqrt()) / (2.0 * rho1));
    let q = &eig.eigenvectors;
    let mut qd = q.clone();
    for (j, mut col) in qd.column_iter_mut().enumerate() {
        col *= scaled[j];
    }
    Ok(SymMatrix::symmetrized(qd * q.transpose()))
}

/// Warm-startable state of the inner ADMM.
#[derive(Debug, Clone)]
struct InnerState {
    v: Vec<f64>,
    t: Vec<f64>,
    rho2: f64,
}

impl InnerState {
    fn new(rows: usize, rho2: f64) -> Self {
        Self { v: vec![0.0; rows], t: vec![0.0; rows], rho2 }
    }
}

/// Outcome of one inner solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerReport {
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `1/2 ||z - b||^2 + sum_r w_r |z[a_r] - z[b_r]|` with the inner
/// ADMM, starting from zero dual variables.
pub fn inner_generalized_lasso(
    b: &PdVec,
    op: &FusedDiffOperator,
    rho2: f64,
    cfg: &AdmmConfig,
) -> Result<(PdVec, InnerReport)> {
    if !(rho2 > 0.0) {
        return Err(PdError::InvalidArgument(format!("rho2 must be > 0, got {rho2}")));
    }
    if b.len() != op.idx.vec_len() {
        return Err(PdError::DimensionMismatch { expected: op.idx.vec_len(), found: b.len() });
    }
    if op.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(PdError::InvalidArgument("inner weights must be finite and >= 0".into()));
    }
    let active = op.active();
    let mut state = InnerState::new(active.n_rows(), rho2);
    let mut z = b.clone();
    let report = inner_solve(b.as_slice(), &active, 1.0, &mut state, cfg, z.as_mut_slice());
    Ok((z, report))
}

/// Inner ADMM on the active rows of `op`, thresholds `op.weights / scale`.
/// Writes the solution into `z`; unfused coordinates are copied from `b`.
fn inner_solve(
    b: &[f64],
    op: &FusedDiffOperator,
    scale: f64,
    state: &mut InnerState,
    cfg: &AdmmConfig,
    z: &mut [f64],
) -> InnerReport {
    z.copy_from_slice(b);
    let m = op.rows.len();
    if m == 0 {
        return InnerReport { iterations: 0, converged: true };
    }
    let mut converged = false;
    let mut iterations = 0;
    let sqrt_m = (m as f64).sqrt();
    let sqrt_n = (2.0 * m as f64).sqrt();
    for it in 1..=cfg.max_inner {
        iterations = it;
        let rho = state.rho2;
        let denom = 1.0 + 2.0 * rho;
        let mut r_sq = 0.0;
        let mut dv_sq = 0.0;
        let mut fz_sq = 0.0;
        let mut v_sq = 0.0;
        let mut t_sq = 0.0;
        for (r, &(a, bb)) in op.rows.iter().enumerate() {
            // (I + rho F^T F)^{-1} restricted to one fused pair.
            let c = rho * (state.v[r] - state.t[r]);
            let ra = b[a] + c;
            let rb = b[bb] - c;
            let za = ((1.0 + rho) * ra + rho * rb) / denom;
            let zb = (rho * ra + (1.0 + rho) * rb) / denom;
            z[a] = za;
            z[bb] = zb;
            let fz = za - zb;
            let v_new = shrink(fz + state.t[r], op.weights[r] / scale / rho);
            let dv = v_new - state.v[r];
            state.t[r] += fz - v_new;
            state.v[r] = v_new;
            r_sq += (fz - v_new) * (fz - v_new);
            dv_sq += dv * dv;
            fz_sq += fz * fz;
            v_sq += v_new * v_new;
            t_sq += state.t[r] * state.t[r];
        }
        let primal = r_sq.sqrt();
        // ||F^T dv|| = sqrt(2) ||dv|| since the rows are disjoint.
        let dual = rho * (2.0 * dv_sq).sqrt();
        let eps_pri = sqrt_m * cfg.eps_abs + cfg.eps_rel * fz_sq.sqrt().max(v_sq.sqrt());
        let eps_dual = sqrt_n * cfg.eps_abs + cfg.eps_rel * rho * (2.0 * t_sq).sqrt();
        if primal <= eps_pri && dual <= eps_dual {
            converged = true;
            break;
        }
        if cfg.adaptive {
            if primal > BALANCE_MU * dual {
                state.rho2 *= BALANCE_TAU;
                state.t.iter_mut().for_each(|t| *t /= BALANCE_TAU);
            } else if dual > BALANCE_MU * primal {
                state.rho2 /= BALANCE_TAU;
                state.t.iter_mut().for_each(|t| *t *= BALANCE_TAU);
            }
        }
    }
    // Rows whose split variable was thresholded to zero are fused exactly.
    for (r, &(a, bb)) in op.rows.iter().enumerate() {
        if state.v[r] == 0.0 {
            let mean = 0.5 * (z[a] + z[bb]);
            z[a] = mean;
            z[bb] = mean;
        }
    }
    InnerReport { iterations, converged }
}

/// Penalty weights resolved to numbers, in [`PdVec`] coordinates.
///
/// `lasso[k]` thresholds coordinate `k`; the operator rows carry the fused
/// weights. Coordinates or rows flagged `hard` came from an `Infinite`
/// level (or a structural constraint) and are enforced exactly on exit.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyWeights {
    idx: PairedIndex,
    pub lasso: Vec<f64>,
    pub lasso_hard: Vec<bool>,
    pub fused: FusedDiffOperator,
    pub fused_hard: Vec<bool>,
}

impl PenaltyWeights {
    /// Resolves a [`PenaltySpec`]; `Infinite` levels become `surrogate`.
    pub fn from_spec(spec: &PenaltySpec, idx: PairedIndex, surrogate: f64) -> Result<Self> {
        spec.validate()?;
        let lay = idx.layout();
        let mut lasso = vec![spec.lambda1; idx.vec_len()];
        if !spec.penalize_diagonal {
            lasso[lay.diag_ll..lay.upper_ll].fill(0.0);
        }
        let fused = FusedDiffOperator::new(
            idx,
            spec.lambda2_vertex.weight(surrogate),
            spec.lambda2_inside.weight(surrogate),
            spec.lambda2_across.weight(surrogate),
        );
        let fused_hard = fused
            .kinds()
            .iter()
            .map(|k| match k {
                FusedKind::Vertex => spec.lambda2_vertex.is_infinite(),
                FusedKind::Inside => spec.lambda2_inside.is_infinite(),
                FusedKind::Across => spec.lambda2_across.is_infinite(),
            })
            .collect();
        Ok(Self { idx, lasso_hard: vec![false; idx.vec_len()], lasso, fused, fused_hard })
    }

    /// All-zero weights with the full operator.
    pub fn zero(idx: PairedIndex) -> Self {
        Self {
            idx,
            lasso: vec![0.0; idx.vec_len()],
            lasso_hard: vec![false; idx.vec_len()],
            fused: FusedDiffOperator::new(idx, 0.0, 0.0, 0.0),
            fused_hard: vec![false; idx.q() + 2 * idx.s()],
        }
    }

    pub fn index(&self) -> PairedIndex {
        self.idx
    }

    fn validate(&self) -> Result<()> {
        let n = self.idx.vec_len();
        if self.lasso.len() != n || self.lasso_hard.len() != n || self.fused_hard.len() != self.fused.n_rows() {
            return Err(PdError::DimensionMismatch { expected: n, found: self.lasso.len() });
        }
        if self.lasso.iter().chain(self.fused.weights()).any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(PdError::InvalidArgument("penalty weights must be finite and >= 0".into()));
        }
        for (r, &(a, b)) in self.fused.rows().iter().enumerate() {
            if self.fused.weights()[r] > 0.0 && self.lasso[a] != self.lasso[b] {
                return Err(PdError::InvalidArgument("fused coordinates must share the same lasso weight".into()));
            }
        }
        Ok(())
    }

    fn is_unpenalized(&self) -> bool {
        self.lasso.iter().all(|&w| w == 0.0) && self.fused.weights().iter().all(|&w| w == 0.0)
    }
}

/// Multiplicity of a [`PdVec`] coordinate in the full matrix (1 on the
/// diagonal, 2 off it).
fn multiplicities(idx: PairedIndex) -> Vec<f64> {
    idx.coordinates().into_iter().map(|(r, c)| if r == c { 1.0 } else { 2.0 }).collect()
}

/// Penalized objective under resolved weights.
pub fn weighted_objective(theta: &SymMatrix, s: &SymMatrix, weights: &PenaltyWeights) -> Result<f64> {
    let idx = weights.idx;
    let x = pd_vec(theta, idx)?;
    let x = x.as_slice();
    let mult = multiplicities(idx);
    let lasso: f64 = x.iter().zip(&weights.lasso).zip(&mult).map(|((v, w), m)| m * w * v.abs()).sum();
    let fused: f64 = weights
        .fused
        .rows()
        .iter()
        .zip(weights.fused.weights())
        .map(|(&(a, b), w)| mult[a] * w * (x[a] - x[b]).abs())
        .sum();
    Ok(-log_likelihood(theta, s)? + lasso + fused)
}

/// Solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub outer_iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub primal_threshold: f64,
    pub dual_threshold: f64,
    pub converged: bool,
    pub objective_value: f64,
    /// Some inner solve hit `max_inner`.
    pub inner_warning: bool,
    /// `Z` was not positive definite and the `Theta` iterate was returned.
    pub used_theta_iterate: bool,
    pub final_rho1: f64,
}

/// One `Z` update: fused-lasso signal approximator on `A`, then the soft
/// threshold at `lambda1 / rho1`.
pub fn z_step(a: &SymMatrix, spec: &PenaltySpec, rho1: f64, cfg: &AdmmConfig) -> Result<SymMatrix> {
    if !(rho1 > 0.0) {
        return Err(PdError::InvalidArgument(format!("rho1 must be > 0, got {rho1}")));
    }
    let idx = PairedIndex::from_dim(a.dim())?;
    let weights = PenaltyWeights::from_spec(spec, idx, cfg.inf_surrogate_factor * a.max_abs().max(1.0))?;
    let active = weights.fused.active();
    let mut state = InnerState::new(active.n_rows(), cfg.rho2);
    let (z, _) = z_step_weighted(a, &weights, &active, rho1, &mut state, cfg)?;
    Ok(z)
}

fn z_step_weighted(
    a: &SymMatrix,
    weights: &PenaltyWeights,
    active: &FusedDiffOperator,
    rho1: f64,
    state: &mut InnerState,
    cfg: &AdmmConfig,
) -> Result<(SymMatrix, InnerReport)> {
    let idx = weights.idx;
    let b = pd_vec(a, idx)?;
    let mut z = PdVec::zeros(idx);
    let report = inner_solve(b.as_slice(), active, rho1, state, cfg, z.as_mut_slice());
    for (zk, w) in z.as_mut_slice().iter_mut().zip(&weights.lasso) {
        *zk = shrink(*zk, w / rho1);
    }
    Ok((pd_unvec(&z, idx)?, report))
}

/// Exact clean-up: hard constraints always, near-zeros and near-fusions
/// below `tol`.
fn polish(z: &SymMatrix, weights: &PenaltyWeights, tol: f64) -> Result<SymMatrix> {
    let idx = weights.idx;
    let mut x = pd_vec(z, idx)?;
    let xs = x.as_mut_slice();
    for (r, &(a, b)) in weights.fused.rows().iter().enumerate() {
        let w = weights.fused.weights()[r];
        if weights.fused_hard[r] || (w > 0.0 && (xs[a] - xs[b]).abs() <= tol) {
            let mean = 0.5 * (xs[a] + xs[b]);
            xs[a] = mean;
            xs[b] = mean;
        }
    }
    for (k, x) in xs.iter_mut().enumerate() {
        if weights.lasso_hard[k] || (weights.lasso[k] > 0.0 && x.abs() <= tol) {
            *x = 0.0;
        }
    }
    pd_unvec(&x, idx)
}

/// Solves the paired-data graphical lasso for `spec`.
///
/// Returns the final `Z` iterate, which carries exact zeros and exact
/// fusions, together with the solver report.
pub fn pdglasso_solve(s: &SymMatrix, spec: &PenaltySpec, cfg: &AdmmConfig) -> Result<(SymMatrix, SolveReport)> {
    let idx = PairedIndex::from_dim(s.dim())?;
    let weights = PenaltyWeights::from_spec(spec, idx, surrogate_value(s, cfg))?;
    solve_weighted(s, &weights, cfg)
}

/// The finite stand-in for `Infinite` penalties.
pub fn surrogate_value(s: &SymMatrix, cfg: &AdmmConfig) -> f64 {
    cfg.inf_surrogate_factor * s.max_abs().max(1.0)
}

/// Solves with explicit per-coordinate weights.
pub fn solve_weighted(s: &SymMatrix, weights: &PenaltyWeights, cfg: &AdmmConfig) -> Result<(SymMatrix, SolveReport)> {
    cfg.validate()?;
    weights.validate()?;
    let idx = weights.idx;
    idx.check_dim(s)?;
    if !s.is_finite() {
        return Err(PdError::NonFinite);
    }
    if s.diagonal().iter().any(|&d| d < 0.0) {
        return Err(PdError::InvalidArgument("S must have a nonnegative diagonal".into()));
    }
    if weights.is_unpenalized() && !s.is_positive_definite() {
        return Err(PdError::InvalidArgument("unpenalized problem needs a positive definite S".into()));
    }

    let p = s.dim();
    let active = weights.fused.active();
    let mut state = InnerState::new(active.n_rows(), cfg.rho2);
    let mut rho = cfg.rho1;
    let mut z = SymMatrix::zeros(p);
    let mut u = SymMatrix::zeros(p);
    let mut theta = SymMatrix::identity(p);
    let mut report = SolveReport {
        outer_iterations: 0,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        primal_threshold: 0.0,
        dual_threshold: 0.0,
        converged: false,
        objective_value: f64::NAN,
        inner_warning: false,
        used_theta_iterate: false,
        final_rho1: rho,
    };

    for it in 1..=cfg.max_outer {
        theta = theta_step(s, &z, &u, rho)?;
        let a = &theta + &u;
        let (z_new, inner) = z_step_weighted(&a, weights, &active, rho, &mut state, cfg)?;
        report.inner_warning |= !inner.converged;
        let diff = &theta - &z_new;
        u = &u + &diff;
        let primal = diff.frobenius();
        let dual = rho * (&z_new - &z).frobenius();
        z = z_new;
        if !z.is_finite() || !u.is_finite() {
            return Err(PdError::MleNonexistent("ADMM iterates diverged".into()));
        }
        let eps_pri = cfg.eps_abs + cfg.eps_rel * theta.frobenius().max(z.frobenius());
        let eps_dual = cfg.eps_abs + cfg.eps_rel * rho * u.frobenius();
        report.outer_iterations = it;
        report.primal_residual = primal;
        report.dual_residual = dual;
        report.primal_threshold = eps_pri;
        report.dual_threshold = eps_dual;
        if primal <= eps_pri && dual <= eps_dual {
            report.converged = true;
            break;
        }
        if cfg.adaptive {
            if primal > BALANCE_MU * dual {
                rho *= BALANCE_TAU;
                u = &u * (1.0 / BALANCE_TAU);
            } else if dual > BALANCE_MU * primal {
                rho /= BALANCE_TAU;
                u = &u * BALANCE_TAU;
            }
        }
    }
    report.final_rho1 = rho;

    let tol = cfg.polish_tol * z.max_abs().max(1.0);
    let mut estimate = polish(&z, weights, tol)?;
    if !estimate.is_positive_definite() {
        estimate = theta;
        report.used_theta_iterate = true;
    }
    report.objective_value = weighted_objective(&estimate, s, weights).unwrap_or(f64::NAN);
    Ok((estimate, report))
}

/// Largest violation of the subgradient optimality conditions at `theta`.
///
/// For each coordinate the smooth gradient `(S - theta^{-1})_ij` plus the
/// lasso and fused subgradients must vanish; zero coordinates and fused
/// pairs may pick any subgradient from their intervals. Returns the
/// smallest achievable per-coordinate residual, maximized over coordinates.
pub fn kkt_residual(theta: &SymMatrix, s: &SymMatrix, weights: &PenaltyWeights) -> Result<f64> {
    let idx = weights.idx;
    let sigma = theta.inverse_pd()?;
    let grad = pd_vec(&(s - &sigma), idx)?;
    let x = pd_vec(theta, idx)?;
    let (g, x) = (grad.as_slice(), x.as_slice());
    let mut in_row = vec![false; x.len()];
    let mut worst: f64 = 0.0;

    for (r, &(a, b)) in weights.fused.rows().iter().enumerate() {
        let w = weights.fused.weights()[r];
        if w == 0.0 {
            continue;
        }
        in_row[a] = true;
        in_row[b] = true;
        let res = |f: f64| -> f64 {
            coord_residual(g[a] + f, x[a], weights.lasso[a]).max(coord_residual(g[b] - f, x[b], weights.lasso[b]))
        };
        let d = x[a] - x[b];
        let best = if d != 0.0 {
            res(w * d.signum())
        } else {
            // Convex in f on [-w, w]: golden-section search plus the ends.
            let (mut lo, mut hi) = (-w, w);
            let phi = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..200 {
                let m1 = hi - phi * (hi - lo);
                let m2 = lo + phi * (hi - lo);
                if res(m1) <= res(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            res(0.5 * (lo + hi)).min(res(-w)).min(res(w))
        };
        worst = worst.max(best);
    }
    for k in 0..x.len() {
        if !in_row[k] {
            worst = worst.max(coord_residual(g[k], x[k], weights.lasso[k]));
        }
    }
    Ok(worst)
}

/// Distance of `-g` from `l1 * d|x|`.
fn coord_residual(g: f64, x: f64, l1: f64) -> f64 {
    if x != 0.0 {
        (g + l1 * x.signum()).abs()
    } else {
        (g.abs() - l1).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::FusedLevel;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn idx(q: usize) -> PairedIndex {
        PairedIndex::new(q).unwrap()
    }

    fn random_sym(p: usize, rng: &mut ChaCha20Rng) -> SymMatrix {
        SymMatrix::symmetrized(DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0)))
    }

    fn random_pd(p: usize, rng: &mut ChaCha20Rng) -> SymMatrix {
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::symmetrized(&a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.3)
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(1.5, 1.0).unwrap(), 0.5);
        assert_eq!(soft_threshold(-0.3, 1.0).unwrap(), 0.0);
        assert_eq!(soft_threshold(-2.5, 1.0).unwrap(), -1.5);
        for x in [-3.0, 0.0, 1e-9, 7.25] {
            assert_eq!(soft_threshold(x, 0.0).unwrap(), x);
        }
        assert!(soft_threshold(1.0, -0.1).is_err());
    }

    #[test]
    fn operator_structure() {
        for q in 1..=5 {
            let op = FusedDiffOperator::new(idx(q), 1.0, 1.0, 1.0);
            assert_eq!(op.n_rows(), q + 2 * idx(q).s());
            let mut seen = vec![0; idx(q).vec_len()];
            for &(a, b) in op.rows() {
                seen[a] += 1;
                seen[b] += 1;
            }
            assert!(seen.iter().all(|&c| c <= 1));
            let lay = idx(q).layout();
            assert!(seen[lay.diag_lr..].iter().all(|&c| c == 0));
        }
    }

    #[test]
    fn apply_f_small_cases() {
        let op = FusedDiffOperator::new(idx(1), 1.0, 1.0, 1.0);
        let v = PdVec::from_vec(vec![2.0, 4.0, 1.0], idx(1)).unwrap();
        assert_eq!(op.apply(&v).unwrap(), vec![-2.0]);
        let m = SymMatrix::from_rows(&[
            vec![2.0, 0.3, 0.1, 0.4],
            vec![0.3, 1.5, 0.4, -0.2],
            vec![0.1, 0.4, 2.0, 0.3],
            vec![0.4, -0.2, 0.3, 1.5],
        ])
        .unwrap();
        let op = FusedDiffOperator::new(idx(2), 1.0, 1.0, 1.0);
        assert!(op.apply(&pd_vec(&m, idx(2)).unwrap()).unwrap().iter().all(|&x| x == 0.0));
        assert!(op.apply(&PdVec::zeros(idx(3))).is_err());
    }

    // Dense F built from the block description, for q <= 4.
    fn dense_f(ix: PairedIndex) -> DMatrix<f64> {
        let (q, s) = (ix.q(), ix.s());
        let n = ix.vec_len();
        let mut f = DMatrix::zeros(q + 2 * s, n);
        for i in 0..q {
            f[(i, i)] = 1.0;
            f[(i, q + i)] = -1.0;
        }
        for k in 0..s {
            f[(q + k, 2 * q + k)] = 1.0;
            f[(q + k, 2 * q + s + k)] = -1.0;
            f[(q + s + k, 2 * q + 2 * s + k)] = 1.0;
            f[(q + s + k, 2 * q + 3 * s + k)] = -1.0;
        }
        f
    }

    #[test]
    fn apply_f_matches_dense() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for q in 1..=4 {
            let ix = idx(q);
            let op = FusedDiffOperator::new(ix, 1.0, 1.0, 1.0);
            let f = dense_f(ix);
            for _ in 0..5 {
                let raw: Vec<f64> = (0..ix.vec_len()).map(|_| rng.random_range(-3.0..3.0)).collect();
                let dense = &f * nalgebra::DVector::from_vec(raw.clone());
                let v = PdVec::from_vec(raw, ix).unwrap();
                let got = op.apply(&v).unwrap();
                for (g, d) in got.iter().zip(dense.iter()) {
                    assert_abs_diff_eq!(*g, *d, epsilon = 1e-14);
                }
                let y: Vec<f64> = (0..op.n_rows()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let dense_t = f.transpose() * nalgebra::DVector::from_vec(y.clone());
                let got_t = op.apply_transpose(&y).unwrap();
                for (g, d) in got_t.as_slice().iter().zip(dense_t.iter()) {
                    assert_abs_diff_eq!(*g, *d, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn theta_step_zero_inputs_give_identity() {
        let z = SymMatrix::zeros(4);
        let t = theta_step(&z, &z, &z, 1.0).unwrap();
        assert!((&t - &SymMatrix::identity(4)).max_abs() < 1e-12);
    }

    #[test]
    fn theta_step_golden_ratio() {
        let z = &SymMatrix::identity(3) * 2.0;
        let t = theta_step(&SymMatrix::identity(3), &z, &SymMatrix::zeros(3), 1.0).unwrap();
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((&t - &(&SymMatrix::identity(3) * golden)).max_abs() < 1e-12);
    }

    #[test]
    fn theta_step_first_order_condition() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..10 {
            let p = 6;
            let s = random_pd(p, &mut rng);
            let z = random_sym(p, &mut rng);
            let u = random_sym(p, &mut rng);
            let rho = rng.random_range(0.1..5.0);
            let t = theta_step(&s, &z, &u, rho).unwrap();
            assert!(t.is_positive_definite());
            let grad = &(&s - &t.inverse_pd().unwrap()) + &(&(&(&t - &z) + &u) * rho);
            assert!(grad.max_abs() < 1e-8, "{}", grad.max_abs());
        }
        assert!(theta_step(&SymMatrix::identity(2), &SymMatrix::zeros(2), &SymMatrix::zeros(2), 0.0).is_err());
    }

    fn one_pair(b1: f64, b2: f64, w: f64) -> (f64, f64) {
        let ix = idx(1);
        let op = FusedDiffOperator::new(ix, w, 0.0, 0.0);
        let b = PdVec::from_vec(vec![b1, b2, 0.0], ix).unwrap();
        let (z, rep) = inner_generalized_lasso(&b, &op, 1.0, &AdmmConfig::default()).unwrap();
        assert!(rep.converged);
        (z.as_slice()[0], z.as_slice()[1])
    }

    #[test]
    fn inner_two_point_fusion() {
        let (a, b) = one_pair(1.0, 3.0, 2.0);
        assert_eq!((a, b), (2.0, 2.0));
        let (a, b) = one_pair(1.0, 3.0, 0.5);
        assert_abs_diff_eq!(a, 1.5, epsilon = 1e-7);
        assert_abs_diff_eq!(b, 2.5, epsilon = 1e-7);
    }

    #[test]
    fn inner_zero_weights_is_identity() {
        let ix = idx(3);
        let op = FusedDiffOperator::new(ix, 0.0, 0.0, 0.0);
        let b = PdVec::from_vec((0..ix.vec_len()).map(|k| k as f64 * 0.37 - 1.0).collect(), ix).unwrap();
        let (z, rep) = inner_generalized_lasso(&b, &op, 1.0, &AdmmConfig::default()).unwrap();
        assert_eq!(z, b);
        assert!(rep.iterations <= 1);
    }

    // Closed-form two-point fused lasso per row.
    #[test]
    fn inner_matches_two_point_closed_form() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let ix = idx(4);
        let op = FusedDiffOperator::new(ix, 0.3, 0.2, 0.7);
        let raw: Vec<f64> = (0..ix.vec_len()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = PdVec::from_vec(raw.clone(), ix).unwrap();
        let (z, _) = inner_generalized_lasso(&b, &op, 1.0, &AdmmConfig::default()).unwrap();
        let mut expect = raw.clone();
        for (r, &(a, bb)) in op.rows().iter().enumerate() {
            let w = op.weights()[r];
            let d = raw[a] - raw[bb];
            if d.abs() <= 2.0 * w {
                let m = 0.5 * (raw[a] + raw[bb]);
                expect[a] = m;
                expect[bb] = m;
            } else {
                expect[a] = raw[a] - w * d.signum();
                expect[bb] = raw[bb] + w * d.signum();
            }
        }
        for (g, e) in z.as_slice().iter().zip(&expect) {
            assert_abs_diff_eq!(*g, *e, epsilon = 1e-7);
        }
    }

    #[test]
    fn z_step_trivial_specs() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let a = random_sym(6, &mut rng);
        let cfg = AdmmConfig::default();
        let z = z_step(&a, &PenaltySpec::glasso(0.0), 1.0, &cfg).unwrap();
        assert_eq!(z, a);
        let z = z_step(&a, &PenaltySpec::glasso(1e6), 1.0, &cfg).unwrap();
        assert_eq!(z, SymMatrix::zeros(6));
    }

    #[test]
    fn z_step_infinite_fuses_everything() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let a = random_sym(6, &mut rng);
        let spec =
            PenaltySpec::glasso(0.0).with_fused(FusedLevel::Infinite, FusedLevel::Infinite, FusedLevel::Infinite);
        let z = z_step(&a, &spec, 1.0, &AdmmConfig::default()).unwrap();
        assert_eq!(crate::paired::swap_blocks(&z, idx(3)).unwrap(), z);
    }

    #[test]
    fn solve_decoupled_diagonal() {
        let s = SymMatrix::from_diagonal(&[2.0, 0.5, 4.0, 1.0]);
        let (t, rep) = pdglasso_solve(&s, &PenaltySpec::glasso(0.0), &AdmmConfig::default()).unwrap();
        assert!(rep.converged);
        let inv = SymMatrix::from_diagonal(&[0.5, 2.0, 0.25, 1.0]);
        assert!((&t - &inv).max_abs() < 1e-6);
    }

    #[test]
    fn solve_rejects_bad_inputs() {
        let cfg = AdmmConfig::default();
        let singular = SymMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(pdglasso_solve(&singular, &PenaltySpec::glasso(0.0), &cfg).is_err());
        assert!(pdglasso_solve(&singular, &PenaltySpec::glasso(0.1), &cfg).is_ok());
        assert!(pdglasso_solve(&SymMatrix::identity(3), &PenaltySpec::glasso(0.1), &cfg).is_err());
        let bad = AdmmConfig { rho1: -1.0, ..cfg };
        assert!(pdglasso_solve(&SymMatrix::identity(2), &PenaltySpec::glasso(0.1), &bad).is_err());
    }

    #[test]
    fn kkt_small_problem() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let s = random_pd(6, &mut rng);
        let spec = PenaltySpec::uniform(0.05, 0.05);
        let cfg = AdmmConfig::default();
        let (t, rep) = pdglasso_solve(&s, &spec, &cfg).unwrap();
        assert!(rep.converged);
        let w = PenaltyWeights::from_spec(&spec, idx(3), surrogate_value(&s, &cfg)).unwrap();
        let kkt = kkt_residual(&t, &s, &w).unwrap();
        assert!(kkt < 10.0 * cfg.eps_abs, "kkt {kkt:e}");
    }
}
