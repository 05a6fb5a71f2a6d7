//! Penalty functionals, the penalized objective and the closed-form penalty
//! values beyond which the estimate is diagonal, block diagonal or fully
//! symmetric.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{PdError, Result};
use crate::paired::{log_likelihood, PairedIndex, SymMatrix};

/// Level of one fused penalty component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusedLevel {
    Zero,
    Finite(f64),
    /// Hard equality constraint.
    Infinite,
}

impl FusedLevel {
    pub fn finite(v: f64) -> Result<Self> {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(PdError::InvalidArgument(format!("fused penalty must be finite and >= 0, got {v}")));
        }
        Ok(if v == 0.0 { FusedLevel::Zero } else { FusedLevel::Finite(v) })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, FusedLevel::Zero) || matches!(self, FusedLevel::Finite(v) if *v == 0.0)
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, FusedLevel::Infinite)
    }

    /// Numeric weight, with `surrogate` standing in for `Infinite`.
    pub fn weight(&self, surrogate: f64) -> f64 {
        match *self {
            FusedLevel::Zero => 0.0,
            FusedLevel::Finite(v) => v,
            FusedLevel::Infinite => surrogate,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            FusedLevel::Finite(v) if !(v >= 0.0) || !v.is_finite() => {
                Err(PdError::InvalidArgument(format!("fused penalty must be finite and >= 0, got {v}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for FusedLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusedLevel::Zero => write!(f, "0"),
            FusedLevel::Finite(v) => write!(f, "{v}"),
            FusedLevel::Infinite => write!(f, "Inf"),
        }
    }
}

impl FromStr for FusedLevel {
    type Err = PdError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(FusedLevel::Infinite);
        }
        let v: f64 = t.parse().map_err(|_| PdError::InvalidArgument(format!("expected a number or Inf, got {s:?}")))?;
        FusedLevel::finite(v)
    }
}

impl Serialize for FusedLevel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            FusedLevel::Zero => serializer.serialize_f64(0.0),
            FusedLevel::Finite(v) => serializer.serialize_f64(v),
            FusedLevel::Infinite => serializer.serialize_str("Inf"),
        }
    }
}

impl<'de> Deserialize<'de> for FusedLevel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(v) => FusedLevel::finite(v).map_err(serde::de::Error::custom),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// The lasso penalty plus the three fused components (vertex, inside,
/// across).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub lambda1: f64,
    pub lambda2_vertex: FusedLevel,
    pub lambda2_inside: FusedLevel,
    pub lambda2_across: FusedLevel,
    /// Whether the lasso term also covers the diagonal.
    #[serde(default = "default_true")]
    pub penalize_diagonal: bool,
}

fn default_true() -> bool {
    true
}

impl PenaltySpec {
    /// Lasso only; equivalent to the ordinary graphical lasso.
    pub fn glasso(lambda1: f64) -> Self {
        Self {
            lambda1,
            lambda2_vertex: FusedLevel::Zero,
            lambda2_inside: FusedLevel::Zero,
            lambda2_across: FusedLevel::Zero,
            penalize_diagonal: true,
        }
    }

    /// The same `lambda2` on every fused component.
    pub fn uniform(lambda1: f64, lambda2: f64) -> Self {
        let l2 = if lambda2 == 0.0 { FusedLevel::Zero } else { FusedLevel::Finite(lambda2) };
        Self { lambda1, lambda2_vertex: l2, lambda2_inside: l2, lambda2_across: l2, penalize_diagonal: true }
    }

    pub fn with_fused(mut self, vertex: FusedLevel, inside: FusedLevel, across: FusedLevel) -> Self {
        self.lambda2_vertex = vertex;
        self.lambda2_inside = inside;
        self.lambda2_across = across;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0) || !self.lambda1.is_finite() {
            return Err(PdError::InvalidArgument(format!("lambda1 must be finite and >= 0, got {}", self.lambda1)));
        }
        self.lambda2_vertex.validate()?;
        self.lambda2_inside.validate()?;
        self.lambda2_across.validate()?;
        Ok(())
    }

    pub fn has_fusion(&self) -> bool {
        !(self.lambda2_vertex.is_zero() && self.lambda2_inside.is_zero() && self.lambda2_across.is_zero())
    }
}

/// `lambda1 * sum_ij |theta_ij|`, diagonal included.
pub fn l1_penalty(theta: &SymMatrix, lambda1: f64) -> Result<f64> {
    if !(lambda1 >= 0.0) {
        return Err(PdError::InvalidArgument(format!("lambda1 must be >= 0, got {lambda1}")));
    }
    Ok(lambda1 * theta.as_matrix().iter().map(|v| v.abs()).sum::<f64>())
}

fn l1_penalty_offdiag(theta: &SymMatrix, lambda1: f64) -> f64 {
    let total: f64 = theta.as_matrix().iter().map(|v| v.abs()).sum();
    let diag: f64 = theta.diagonal().iter().map(|v| v.abs()).sum();
    lambda1 * (total - diag)
}

/// The three absolute-difference sums behind the fused penalty:
/// `(||diag(LL) - diag(RR)||_1, ||LL* - RR*||_1, ||LR - RL||_1)` as full
/// matrix l1 norms.
pub fn fused_differences(theta: &SymMatrix, idx: PairedIndex) -> Result<(f64, f64, f64)> {
    idx.check_dim(theta)?;
    let q = idx.q();
    let vertex = (0..q).map(|i| (theta.get(i, i) - theta.get(i + q, i + q)).abs()).sum();
    let mut inside = 0.0;
    let mut across = 0.0;
    for (i, j) in idx.pairs() {
        inside += 2.0 * (theta.get(i, j) - theta.get(i + q, j + q)).abs();
        across += 2.0 * (theta.get(i, j + q) - theta.get(i + q, j)).abs();
    }
    Ok((vertex, inside, across))
}

fn component(level: FusedLevel, diff: f64) -> f64 {
    match level {
        FusedLevel::Zero => 0.0,
        FusedLevel::Finite(v) => v * diff,
        FusedLevel::Infinite if diff == 0.0 => 0.0,
        FusedLevel::Infinite => f64::INFINITY,
    }
}

/// Component-wise fused penalty. `Infinite` components evaluate to `+inf`
/// unless the corresponding differences are exactly zero.
pub fn fused_penalty(theta: &SymMatrix, spec: &PenaltySpec, idx: PairedIndex) -> Result<f64> {
    let (v, i, a) = fused_differences(theta, idx)?;
    Ok(component(spec.lambda2_vertex, v) + component(spec.lambda2_inside, i) + component(spec.lambda2_across, a))
}

/// Penalized negative log-likelihood.
pub fn objective(theta: &SymMatrix, s: &SymMatrix, spec: &PenaltySpec) -> Result<f64> {
    spec.validate()?;
    let idx = PairedIndex::from_dim(theta.dim())?;
    let lasso =
        if spec.penalize_diagonal { l1_penalty(theta, spec.lambda1)? } else { l1_penalty_offdiag(theta, spec.lambda1) };
    Ok(-log_likelihood(theta, s)? + lasso + fused_penalty(theta, spec, idx)?)
}

/// Smallest `lambda1` giving a diagonal estimate for every `lambda2 >= 0`:
/// the largest absolute off-diagonal entry of `S`.
pub fn lambda1_diag_max(s: &SymMatrix) -> Result<f64> {
    if s.dim() < 2 {
        return Err(PdError::InvalidArgument("need at least two variables".into()));
    }
    Ok(s.max_abs_off_diagonal())
}

/// Smallest `lambda1` making the across block `LR` vanish for every
/// `lambda2 >= 0`.
pub fn lambda1_block_max(s: &SymMatrix, idx: PairedIndex) -> Result<f64> {
    idx.check_dim(s)?;
    let q = idx.q();
    let mut best: f64 = 0.0;
    for i in 0..q {
        for j in q..2 * q {
            best = best.max(s.get(i, j).abs());
        }
    }
    Ok(best)
}

/// Smallest uniform `lambda2` giving a fully symmetric estimate:
/// `max_{i,j in L} { |s_ij - s_i'j'| / 2, |s_i'j - s_ij'| / 2 }`.
pub fn lambda2_sym_max(s: &SymMatrix, idx: PairedIndex) -> Result<f64> {
    idx.check_dim(s)?;
    let q = idx.q();
    let mut best: f64 = 0.0;
    for i in 0..q {
        for j in 0..q {
            let inside = (s.get(i, j) - s.get(i + q, j + q)).abs() / 2.0;
            let across = (s.get(i + q, j) - s.get(i, j + q)).abs() / 2.0;
            best = best.max(inside).max(across);
        }
    }
    Ok(best)
}
