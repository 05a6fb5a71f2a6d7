use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{pdglasso_solve, AdmmConfig, SolveReport};
use crate::error::{PdError, Result};
use crate::model::graph::{default_tolerance, extract_graph_masked, n_params, ColourMask, PdColouredGraph};
use crate::model::mle::{ebic, mle};
use crate::paired::{PairedIndex, SymMatrix};
use crate::penalty::{lambda1_diag_max, lambda2_sym_max, FusedLevel, PenaltySpec};

/// Role of one fused component during model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    /// Never fused.
    Zero,
    /// Zero in stage 1, searched over in stage 2.
    Gridded,
    /// Always forced equal.
    Infinite,
}

impl std::str::FromStr for ClassMode {
    type Err = PdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "0" | "zero" => Ok(ClassMode::Zero),
            "grid" | "gridded" => Ok(ClassMode::Gridded),
            "inf" | "infinite" => Ok(ClassMode::Infinite),
            other => Err(PdError::InvalidArgument(format!("unknown class mode '{other}' (use 0, grid or inf)"))),
        }
    }
}

/// Submodel class searched by [`model_select`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub vertex: ClassMode,
    pub inside: ClassMode,
    pub across: ClassMode,
    pub penalize_diagonal: bool,
}

impl ClassSpec {
    /// All components gridded.
    pub fn pdglasso() -> Self {
        Self {
            vertex: ClassMode::Gridded,
            inside: ClassMode::Gridded,
            across: ClassMode::Gridded,
            penalize_diagonal: true,
        }
    }

    /// No fusion at all.
    pub fn glasso() -> Self {
        Self { vertex: ClassMode::Zero, inside: ClassMode::Zero, across: ClassMode::Zero, penalize_diagonal: true }
    }

    fn modes(&self) -> [ClassMode; 3] {
        [self.vertex, self.inside, self.across]
    }

    pub fn has_gridded(&self) -> bool {
        self.modes().contains(&ClassMode::Gridded)
    }

    /// Penalty at one grid point.
    pub fn spec_at(&self, lambda1: f64, lambda2: f64) -> PenaltySpec {
        let level = |m: ClassMode| match m {
            ClassMode::Zero => FusedLevel::Zero,
            ClassMode::Infinite => FusedLevel::Infinite,
            ClassMode::Gridded if lambda2 > 0.0 => FusedLevel::Finite(lambda2),
            ClassMode::Gridded => FusedLevel::Zero,
        };
        let mut spec =
            PenaltySpec::glasso(lambda1).with_fused(level(self.vertex), level(self.inside), level(self.across));
        spec.penalize_diagonal = self.penalize_diagonal;
        spec
    }
}

/// A selected model.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Penalized estimate.
    pub theta_hat: SymMatrix,
    /// Constrained MLE refit on the extracted graph.
    pub theta_mle: SymMatrix,
    pub graph: PdColouredGraph,
    pub d: usize,
    pub ebic: f64,
    pub spec: PenaltySpec,
    pub report: SolveReport,
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub stage: u8,
    pub lambda1: f64,
    pub lambda2: f64,
    pub ebic: Option<f64>,
    pub d: Option<usize>,
    pub converged: bool,
    pub error: Option<String>,
}

/// Winner plus every evaluated grid point in evaluation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub best: FitResult,
    pub grid: Vec<GridRecord>,
}

/// `m` values equally spaced on the log scale in `[max / m, max]`,
/// ascending. All zeros when `max == 0`.
pub fn log_grid(max: f64, m: usize) -> Vec<f64> {
    if max == 0.0 {
        return vec![0.0; m];
    }
    let lo = (max / m as f64).ln();
    let hi = max.ln();
    (0..m).map(|k| if k + 1 == m { max } else { (lo + (hi - lo) * k as f64 / (m - 1) as f64).exp() }).collect()
}

/// Solve, extract, refit and score one penalty.
pub fn fit_point(s: &SymMatrix, n: usize, gamma: f64, spec: &PenaltySpec, cfg: &AdmmConfig) -> Result<FitResult> {
    let idx = PairedIndex::from_dim(s.dim())?;
    let (theta_hat, report) = pdglasso_solve(s, spec, cfg)?;
    let tol = default_tolerance(&theta_hat);
    let mask = ColourMask {
        vertex: !spec.lambda2_vertex.is_zero(),
        inside: !spec.lambda2_inside.is_zero(),
        across: !spec.lambda2_across.is_zero(),
    };
    let graph = extract_graph_masked(&theta_hat, idx, tol, tol, mask)?;
    let theta_mle = mle(s, &graph, cfg)?;
    let d = n_params(&graph);
    let ebic = ebic(&theta_mle, s, n, d, gamma)?;
    Ok(FitResult { theta_hat, theta_mle, graph, d, ebic, spec: *spec, report })
}

fn record(stage: u8, lambda1: f64, lambda2: f64, fit: &Result<FitResult>) -> GridRecord {
    match fit {
        Ok(f) => GridRecord {
            stage,
            lambda1,
            lambda2,
            ebic: Some(f.ebic),
            d: Some(f.d),
            converged: f.report.converged,
            error: None,
        },
        Err(e) => {
            GridRecord { stage, lambda1, lambda2, ebic: None, d: None, converged: false, error: Some(e.to_string()) }
        }
    }
}

/// Lower eBIC, then fewer parameters, then the larger penalty.
fn better(a: &FitResult, b: &FitResult) -> bool {
    let key = |f: &FitResult| (f.ebic, f.d as f64, -f.spec.lambda1, -lambda2_of(&f.spec));
    let (ka, kb) = (key(a), key(b));
    ka.partial_cmp(&kb) == Some(std::cmp::Ordering::Less)
}

fn lambda2_of(spec: &PenaltySpec) -> f64 {
    [spec.lambda2_vertex, spec.lambda2_inside, spec.lambda2_across]
        .iter()
        .map(|l| match l {
            FusedLevel::Finite(v) => *v,
            _ => 0.0,
        })
        .fold(0.0, f64::max)
}

fn best_of(fits: Vec<Result<FitResult>>) -> Option<FitResult> {
    let mut best: Option<FitResult> = None;
    for f in fits.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| better(&f, b)) {
            best = Some(f);
        }
    }
    best
}

/// Two-stage eBIC selection over log-spaced penalty grids.
///
/// Stage 1 scans `lambda1` with gridded components at zero; stage 2 fixes
/// the winning `lambda1` and scans `lambda2` on the gridded components.
/// Grid points run in parallel; results are reduced in grid order.
pub fn model_select(
    s: &SymMatrix,
    n: usize,
    m: usize,
    gamma: f64,
    class: &ClassSpec,
    cfg: &AdmmConfig,
) -> Result<Selection> {
    if m < 2 {
        return Err(PdError::InvalidArgument(format!("grid length must be >= 2, got {m}")));
    }
    if n == 0 || !(gamma >= 0.0) {
        return Err(PdError::InvalidArgument("need n >= 1 and gamma >= 0".into()));
    }
    cfg.validate()?;
    let idx = PairedIndex::from_dim(s.dim())?;

    let l1_grid = log_grid(lambda1_diag_max(s)?, m);
    let stage1: Vec<Result<FitResult>> =
        l1_grid.par_iter().map(|&l1| fit_point(s, n, gamma, &class.spec_at(l1, 0.0), cfg)).collect();
    let mut grid: Vec<GridRecord> = l1_grid.iter().zip(&stage1).map(|(&l1, f)| record(1, l1, 0.0, f)).collect();
    let winner1 = best_of(stage1).ok_or(PdError::AllGridPointsFailed)?;
    if !class.has_gridded() {
        return Ok(Selection { best: winner1, grid });
    }

    let lambda1 = winner1.spec.lambda1;
    let l2_grid = log_grid(lambda2_sym_max(s, idx)?, m);
    let stage2: Vec<Result<FitResult>> =
        l2_grid.par_iter().map(|&l2| fit_point(s, n, gamma, &class.spec_at(lambda1, l2), cfg)).collect();
    grid.extend(l2_grid.iter().zip(&stage2).map(|(&l2, f)| record(2, lambda1, l2, f)));
    let mut candidates = vec![Ok(winner1)];
    candidates.extend(stage2);
    let best = best_of(candidates).ok_or(PdError::AllGridPointsFailed)?;
    Ok(Selection { best, grid })
}
