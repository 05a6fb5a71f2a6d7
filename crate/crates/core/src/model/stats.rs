use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{PdError, Result};

/// Outcome of a likelihood ratio test between nested models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub stat: f64,
    pub df: usize,
    /// Chi-square quantile at `1 - alpha`; zero when `df == 0`.
    pub critical: f64,
    pub reject: bool,
}

/// Upper `alpha` quantile of the chi-square distribution with `df` degrees
/// of freedom.
pub fn chi_square_quantile(df: usize, alpha: f64) -> Result<f64> {
    if df == 0 {
        return Err(PdError::InvalidArgument("chi-square needs df >= 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PdError::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let dist = ChiSquared::new(df as f64).map_err(|e| PdError::InvalidArgument(e.to_string()))?;
    Ok(dist.inverse_cdf(1.0 - alpha))
}

/// Likelihood ratio test of a submodel against a larger model from their
/// deviances and parameter counts.
///
/// Equal parameter counts are accepted only for equal deviances and give
/// the degenerate result `df = 0`, never rejecting.
pub fn lrt(deviance_full: f64, d_full: usize, deviance_sub: f64, d_sub: usize, alpha: f64) -> Result<LrtResult> {
    if !deviance_full.is_finite() || !deviance_sub.is_finite() {
        return Err(PdError::NonFinite);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PdError::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let slack = 1e-6 * deviance_full.abs().max(1.0);
    let stat = deviance_sub - deviance_full;
    if d_sub > d_full {
        return Err(PdError::NotNested(format!("submodel has {d_sub} parameters, more than {d_full}")));
    }
    if stat < -slack {
        return Err(PdError::NotNested(format!("submodel deviance is lower by {:.6}", -stat)));
    }
    let stat = stat.max(0.0);
    let df = d_full - d_sub;
    if df == 0 {
        if stat > slack {
            return Err(PdError::NotNested("equal parameter counts with different fits".into()));
        }
        return Ok(LrtResult { stat: 0.0, df: 0, critical: 0.0, reject: false });
    }
    let critical = chi_square_quantile(df, alpha)?;
    Ok(LrtResult { stat, df, critical, reject: stat > critical })
}
