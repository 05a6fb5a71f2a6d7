//! Coloured graphs of pdRCON models, constrained maximum likelihood,
//! information criteria and model selection.

pub mod graph;
pub mod mle;
pub mod select;
pub mod stats;

pub use graph::{
    constraint_weights, default_tolerance, extract_graph, extract_graph_masked, graph_summary, n_params, ColourMask,
    EdgeSlot, EdgeState, GraphSummary, PdColouredGraph,
};
pub use mle::{
    deviance, ebic, likelihood_equation_residual, mle, mle_fully_symmetric, partial_correlations, partial_variances,
};
pub use select::{fit_point, log_grid, model_select, ClassMode, ClassSpec, FitResult, GridRecord, Selection};
pub use stats::{chi_square_quantile, lrt, LrtResult};
