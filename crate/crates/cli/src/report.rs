use anyhow::{bail, Result};
use pdglasso::model::{graph_summary, EdgeSlot, EdgeState, FitResult, GraphSummary, PdColouredGraph};
use pdglasso::{AdmmConfig, PenaltySpec, SolveReport, SymMatrix};
use serde::{Deserialize, Serialize};

/// Solver diagnostics; `objective_value` is `None` when it was not finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub converged: bool,
    pub outer_iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub primal_threshold: f64,
    pub dual_threshold: f64,
    pub objective_value: Option<f64>,
    pub inner_warning: bool,
    pub used_theta_iterate: bool,
    pub final_rho1: f64,
}

impl From<&SolveReport> for SolverSummary {
    fn from(r: &SolveReport) -> Self {
        Self {
            converged: r.converged,
            outer_iterations: r.outer_iterations,
            primal_residual: r.primal_residual,
            dual_residual: r.dual_residual,
            primal_threshold: r.primal_threshold,
            dual_threshold: r.dual_threshold,
            objective_value: r.objective_value.is_finite().then_some(r.objective_value),
            inner_warning: r.inner_warning,
            used_theta_iterate: r.used_theta_iterate,
            final_rho1: r.final_rho1,
        }
    }
}

impl SolverSummary {
    fn to_report(&self) -> SolveReport {
        SolveReport {
            outer_iterations: self.outer_iterations,
            primal_residual: self.primal_residual,
            dual_residual: self.dual_residual,
            primal_threshold: self.primal_threshold,
            dual_threshold: self.dual_threshold,
            converged: self.converged,
            objective_value: self.objective_value.unwrap_or(f64::NAN),
            inner_warning: self.inner_warning,
            used_theta_iterate: self.used_theta_iterate,
            final_rho1: self.final_rho1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Inside,
    Across,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetry {
    None,
    Structural,
    Parametric,
}

/// One present edge, 0-based indices with `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub i: usize,
    pub j: usize,
    pub from: String,
    pub to: String,
    pub block: Block,
    pub symmetry: Symmetry,
}

/// Everything a fit produced, in a stable JSON layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub tool: String,
    pub command: String,
    pub variables: Vec<String>,
    pub n: Option<usize>,
    pub gamma: f64,
    pub standardized: bool,
    pub spec: PenaltySpec,
    pub config: AdmmConfig,
    pub solver: SolverSummary,
    pub d: usize,
    pub ebic: Option<f64>,
    pub summary: GraphSummary,
    /// Names of L variables whose diagonal concentrations equal their partner's.
    pub vertex_symmetries: Vec<String>,
    pub edges: Vec<EdgeRecord>,
    pub graph: PdColouredGraph,
    pub theta_hat: Vec<Vec<f64>>,
    pub theta_mle: Option<Vec<Vec<f64>>>,
}

pub struct ReportContext<'a> {
    pub command: &'a str,
    pub variables: &'a [String],
    pub n: Option<usize>,
    pub gamma: f64,
    pub standardized: bool,
    pub config: &'a AdmmConfig,
}

pub fn tool_version() -> String {
    format!("pdglasso {}", env!("CARGO_PKG_VERSION"))
}

fn edge_records(g: &PdColouredGraph, names: &[String]) -> Vec<EdgeRecord> {
    g.edges()
        .into_iter()
        .map(|(i, j)| {
            let (block, state) = match g.slot(i, j).expect("edge indices are valid") {
                EdgeSlot::Inside { pair, .. } => (Block::Inside, Some(g.inside[pair])),
                EdgeSlot::Across { pair, .. } => (Block::Across, Some(g.across[pair])),
                EdgeSlot::AcrossDiag(_) => (Block::Across, None),
            };
            let symmetry = match state {
                Some(EdgeState::Coloured) => Symmetry::Parametric,
                Some(EdgeState::Present) => Symmetry::Structural,
                _ => Symmetry::None,
            };
            EdgeRecord { i, j, from: names[i].clone(), to: names[j].clone(), block, symmetry }
        })
        .collect()
}

impl FitReport {
    #[allow(clippy::too_many_arguments)]
    /// Report for a fit; `ebic` and `theta_mle` are absent when the refit
    /// or the sample size is unavailable.
    pub fn new(
        ctx: &ReportContext,
        spec: &PenaltySpec,
        report: &SolveReport,
        theta_hat: &SymMatrix,
        graph: &PdColouredGraph,
        d: usize,
        ebic: Option<f64>,
        theta_mle: Option<&SymMatrix>,
    ) -> Self {
        Self {
            tool: tool_version(),
            command: ctx.command.to_string(),
            variables: ctx.variables.to_vec(),
            n: ctx.n,
            gamma: ctx.gamma,
            standardized: ctx.standardized,
            spec: *spec,
            config: *ctx.config,
            solver: report.into(),
            d,
            ebic,
            summary: graph_summary(graph),
            vertex_symmetries: (0..graph.q)
                .filter(|&i| graph.vertex_coloured[i])
                .map(|i| ctx.variables[i].clone())
                .collect(),
            edges: edge_records(graph, ctx.variables),
            graph: graph.clone(),
            theta_hat: theta_hat.to_rows(),
            theta_mle: theta_mle.map(SymMatrix::to_rows),
        }
    }

    pub fn from_fit(ctx: &ReportContext, fit: &FitResult) -> Self {
        Self::new(ctx, &fit.spec, &fit.report, &fit.theta_hat, &fit.graph, fit.d, Some(fit.ebic), Some(&fit.theta_mle))
    }

    /// The library-side result; needs the eBIC and the refit.
    pub fn to_fit_result(&self) -> Result<FitResult> {
        let (Some(ebic), Some(mle)) = (self.ebic, self.theta_mle.as_ref()) else {
            bail!("report has no eBIC or no MLE refit");
        };
        Ok(FitResult {
            theta_hat: SymMatrix::from_rows(&self.theta_hat)?,
            theta_mle: SymMatrix::from_rows(mle)?,
            graph: self.graph.clone(),
            d: self.d,
            ebic,
            spec: self.spec,
            report: self.solver.to_report(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: FitReport = serde_json::from_str(text)?;
        r.graph.validate()?;
        if r.variables.len() != r.graph.p() {
            bail!("report lists {} variables for a graph on {}", r.variables.len(), r.graph.p());
        }
        Ok(r)
    }
}
