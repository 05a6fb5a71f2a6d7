//! Joint structure learning of two dependent Gaussian graphical models from
//! paired data.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod admm;
pub mod error;
pub mod model;
pub mod paired;
pub mod penalty;
pub mod simulate;

pub use admm::{pdglasso_solve, AdmmConfig, FusedDiffOperator, PenaltyWeights, SolveReport};
pub use error::{PdError, Result};
pub use model::{model_select, ClassMode, ClassSpec, FitResult, PdColouredGraph};
pub use paired::{PairedIndex, PdVec, SymMatrix};
pub use penalty::{FusedLevel, PenaltySpec};
