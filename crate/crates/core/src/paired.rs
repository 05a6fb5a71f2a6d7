//! Paired-variable indexing, dense symmetric matrices, the block-ordered
//! half-vectorization used by the solver, and the L/R block swap.
//!
//! Variables are split into a left block `L = {0..q}` and a right block
//! `R = {q..2q}`; variable `i` in `L` is paired with `i + q` in `R`.

use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PdError, Result};

/// The L/R partition of `p = 2q` paired variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairedIndex {
    q: usize,
}

impl PairedIndex {
    pub fn new(q: usize) -> Result<Self> {
        if q == 0 {
            return Err(PdError::InvalidArgument("group size q must be positive".into()));
        }
        Ok(Self { q })
    }

    /// Builds the index for a total dimension `p`, which must be even.
    pub fn from_dim(p: usize) -> Result<Self> {
        if p == 0 || !p.is_multiple_of(2) {
            return Err(PdError::OddDimension(p));
        }
        Ok(Self { q: p / 2 })
    }

    #[inline]
    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn p(&self) -> usize {
        2 * self.q
    }

    /// Number of unordered pairs `i < j` inside one block, `q(q-1)/2`.
    #[inline]
    pub fn s(&self) -> usize {
        self.q * (self.q - 1) / 2
    }

    /// Length of a [`PdVec`], `3q + 4s = p(p+1)/2`.
    #[inline]
    pub fn vec_len(&self) -> usize {
        3 * self.q + 4 * self.s()
    }

    /// The partner of variable `i` under the L/R swap.
    #[inline]
    pub fn partner(&self, i: usize) -> usize {
        if i < self.q {
            i + self.q
        } else {
            i - self.q
        }
    }

    #[inline]
    pub fn is_left(&self, i: usize) -> bool {
        i < self.q
    }

    /// Row-major position of the pair `i < j` among the `s` block pairs.
    #[inline]
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.q);
        i * self.q - i * (i + 1) / 2 + (j - i - 1)
    }

    /// Iterates the block pairs `(i, j)`, `i < j < q`, in row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let q = self.q;
        (0..q).flat_map(move |i| (i + 1..q).map(move |j| (i, j)))
    }

    pub fn check_dim(&self, m: &SymMatrix) -> Result<()> {
        if m.dim() != self.p() {
            return Err(PdError::DimensionMismatch { expected: self.p(), found: m.dim() });
        }
        Ok(())
    }

    /// Offsets of the seven segments inside a [`PdVec`].
    pub fn layout(&self) -> VecLayout {
        let q = self.q;
        let s = self.s();
        VecLayout {
            diag_ll: 0,
            diag_rr: q,
            upper_ll: 2 * q,
            upper_rr: 2 * q + s,
            upper_lr: 2 * q + 2 * s,
            upper_rl: 2 * q + 3 * s,
            diag_lr: 2 * q + 4 * s,
        }
    }

    /// Matrix coordinate `(row, col)` stored at every position of a [`PdVec`].
    pub fn coordinates(&self) -> Vec<(usize, usize)> {
        let q = self.q;
        let mut out = Vec::with_capacity(self.vec_len());
        out.extend((0..q).map(|i| (i, i)));
        out.extend((0..q).map(|i| (i + q, i + q)));
        out.extend(self.pairs());
        out.extend(self.pairs().map(|(i, j)| (i + q, j + q)));
        // LR block, strict upper: theta_{i, j'}
        out.extend(self.pairs().map(|(i, j)| (i, j + q)));
        // RL block, strict upper: theta_{i', j}
        out.extend(self.pairs().map(|(i, j)| (i + q, j)));
        out.extend((0..q).map(|i| (i, i + q)));
        out
    }
}

/// Segment offsets of a [`PdVec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VecLayout {
    pub diag_ll: usize,
    pub diag_rr: usize,
    pub upper_ll: usize,
    pub upper_rr: usize,
    pub upper_lr: usize,
    pub upper_rl: usize,
    pub diag_lr: usize,
}

/// Dense symmetric real matrix. Symmetry is enforced on every write.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn zeros(p: usize) -> Self {
        Self(DMatrix::zeros(p, p))
    }

    pub fn identity(p: usize) -> Self {
        Self(DMatrix::identity(p, p))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.0[(i, i)] = v;
        }
        m
    }

    /// Wraps a square matrix, averaging away asymmetry up to a relative
    /// `1e-10`; anything larger is rejected.
    pub fn from_dmatrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(PdError::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(PdError::NonFinite);
        }
        let asym = max_asymmetry(&m);
        let scale = m.amax().max(1.0);
        if asym > 1e-10 * scale {
            return Err(PdError::NotSymmetric(asym));
        }
        Ok(Self::symmetrized(m))
    }

    /// Takes `(m + m^T) / 2` unconditionally.
    pub fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    /// Builds a matrix from row-major rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(PdError::DimensionMismatch { expected: p, found: bad.len() });
        }
        Self::from_dmatrix(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.0[(i, j)] = v;
        self.0[(j, i)] = v;
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| (0..self.dim()).map(|j| self.0[(i, j)]).collect()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.0[(i, i)]).collect()
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }

    pub fn max_abs_off_diagonal(&self) -> f64 {
        let p = self.dim();
        let mut best: f64 = 0.0;
        for i in 0..p {
            for j in i + 1..p {
                best = best.max(self.0[(i, j)].abs());
            }
        }
        best
    }

    pub fn trace_product(&self, other: &SymMatrix) -> f64 {
        self.0.component_mul(&other.0).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `log det` through a Cholesky factorization.
    pub fn log_det(&self) -> Result<f64> {
        let chol = self.0.clone().cholesky().ok_or(PdError::NotPositiveDefinite)?;
        Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    pub fn is_positive_definite(&self) -> bool {
        self.is_finite() && self.0.clone().cholesky().is_some()
    }

    /// Inverse of a positive definite matrix.
    pub fn inverse_pd(&self) -> Result<SymMatrix> {
        let chol = self.0.clone().cholesky().ok_or(PdError::NotPositiveDefinite)?;
        Ok(Self::symmetrized(chol.inverse()))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0.clone().symmetric_eigenvalues().min()
    }

    /// Correlation matrix `D^{-1/2} M D^{-1/2}`.
    pub fn to_correlation(&self) -> Result<SymMatrix> {
        let d = self.diagonal();
        if d.iter().any(|&v| v <= 0.0) {
            return Err(PdError::InvalidArgument("standardization needs a positive diagonal".into()));
        }
        let p = self.dim();
        Ok(Self::symmetrized(DMatrix::from_fn(p, p, |i, j| self.0[(i, j)] / (d[i] * d[j]).sqrt())))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        Self(self.0.map(f))
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let p = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..p {
        for j in i + 1..p {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        SymMatrix(&self.0 * rhs)
    }
}

/// Block-ordered half-vectorization of a paired symmetric matrix.
///
/// Segments: `diag(LL)`, `diag(RR)`, upper `LL`, upper `RR`, upper `LR`,
/// upper `RL`, `diag(LR)`; upper segments list the pairs `i < j` in
/// row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct PdVec {
    idx: PairedIndex,
    data: Vec<f64>,
}

impl PdVec {
    pub fn zeros(idx: PairedIndex) -> Self {
        Self { idx, data: vec![0.0; idx.vec_len()] }
    }

    pub fn from_vec(data: Vec<f64>, idx: PairedIndex) -> Result<Self> {
        if data.len() != idx.vec_len() {
            return Err(PdError::DimensionMismatch { expected: idx.vec_len(), found: data.len() });
        }
        Ok(Self { idx, data })
    }

    pub fn index(&self) -> PairedIndex {
        self.idx
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Half-vectorizes `m` in the paired block order.
pub fn pd_vec(m: &SymMatrix, idx: PairedIndex) -> Result<PdVec> {
    idx.check_dim(m)?;
    let data = idx.coordinates().into_iter().map(|(r, c)| m.get(r, c)).collect();
    Ok(PdVec { idx, data })
}

/// Inverse of [`pd_vec`].
pub fn pd_unvec(v: &PdVec, idx: PairedIndex) -> Result<SymMatrix> {
    if v.len() != idx.vec_len() || v.idx != idx {
        return Err(PdError::DimensionMismatch { expected: idx.vec_len(), found: v.len() });
    }
    let mut m = SymMatrix::zeros(idx.p());
    for ((r, c), &x) in idx.coordinates().into_iter().zip(v.as_slice()) {
        m.set(r, c, x);
    }
    Ok(m)
}

/// `J M J`: exchanges the LL/RR blocks and the LR/RL blocks.
pub fn swap_blocks(m: &SymMatrix, idx: PairedIndex) -> Result<SymMatrix> {
    idx.check_dim(m)?;
    let p = idx.p();
    Ok(SymMatrix(DMatrix::from_fn(p, p, |i, j| m.get(idx.partner(i), idx.partner(j)))))
}

/// `(M + J M J) / 2`, the projection onto swap-invariant matrices.
pub fn symmetrize_paired(m: &SymMatrix, idx: PairedIndex) -> Result<SymMatrix> {
    let swapped = swap_blocks(m, idx)?;
    Ok(&(m + &swapped) * 0.5)
}

/// True when `J M J == M` up to `tol`.
pub fn is_swap_invariant(m: &SymMatrix, idx: PairedIndex, tol: f64) -> Result<bool> {
    let swapped = swap_blocks(m, idx)?;
    Ok((&swapped - m).max_abs() <= tol)
}

/// Gaussian log-likelihood `log det(theta) - tr(S theta)` (scaled by `2/n`
/// and without constants).
pub fn log_likelihood(theta: &SymMatrix, s: &SymMatrix) -> Result<f64> {
    if theta.dim() != s.dim() {
        return Err(PdError::DimensionMismatch { expected: theta.dim(), found: s.dim() });
    }
    Ok(theta.log_det()? - s.trace_product(theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn idx(q: usize) -> PairedIndex {
        PairedIndex::new(q).unwrap()
    }

    #[test]
    fn q1_vectorization() {
        let m = SymMatrix::from_rows(&[vec![2.0, 7.0], vec![7.0, 5.0]]).unwrap();
        let v = pd_vec(&m, idx(1)).unwrap();
        assert_eq!(v.as_slice(), &[2.0, 5.0, 7.0]);
    }

    #[test]
    fn q2_identity_vectorization() {
        let v = pd_vec(&SymMatrix::identity(4), idx(2)).unwrap();
        assert_eq!(v.len(), 3 * 2 + 4);
        assert_eq!(v.as_slice(), &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn unvec_direct_placement() {
        let v = PdVec::from_vec(vec![2.0, 3.0, 5.0], idx(1)).unwrap();
        let m = pd_unvec(&v, idx(1)).unwrap();
        assert_eq!(m.to_rows(), vec![vec![2.0, 5.0], vec![5.0, 3.0]]);
        let z = pd_unvec(&PdVec::zeros(idx(3)), idx(3)).unwrap();
        assert_eq!(z, SymMatrix::zeros(6));
    }

    #[test]
    fn segment_positions_q3() {
        let ix = idx(3);
        let coords = ix.coordinates();
        let lay = ix.layout();
        // pair (0, 2) is the second pair in row-major order
        assert_eq!(coords[lay.upper_ll + 1], (0, 2));
        assert_eq!(coords[lay.upper_rr + 1], (3, 5));
        assert_eq!(coords[lay.upper_lr + 1], (0, 5));
        assert_eq!(coords[lay.upper_rl + 1], (3, 2));
        assert_eq!(coords[lay.diag_lr + 2], (2, 5));
        assert_eq!(ix.pair_index(1, 2), 2);
    }

    #[test]
    fn coordinates_cover_upper_triangle_once() {
        for q in 1..=6 {
            let ix = idx(q);
            let mut seen = std::collections::HashSet::new();
            for (r, c) in ix.coordinates() {
                assert!(seen.insert((r.min(c), r.max(c))));
            }
            assert_eq!(seen.len(), ix.p() * (ix.p() + 1) / 2);
        }
    }

    #[test]
    fn dimension_errors() {
        let m = SymMatrix::identity(4);
        assert!(matches!(pd_vec(&m, idx(3)), Err(PdError::DimensionMismatch { .. })));
        let v = PdVec::zeros(idx(2));
        assert!(pd_unvec(&v, idx(3)).is_err());
        assert!(PdVec::from_vec(vec![0.0; 4], idx(2)).is_err());
        assert!(swap_blocks(&m, idx(1)).is_err());
        assert!(PairedIndex::from_dim(5).is_err());
    }

    #[test]
    fn swap_q1() {
        let m = SymMatrix::from_rows(&[vec![1.0, 3.0], vec![3.0, 2.0]]).unwrap();
        let s = swap_blocks(&m, idx(1)).unwrap();
        assert_eq!(s.to_rows(), vec![vec![2.0, 3.0], vec![3.0, 1.0]]);
    }

    #[test]
    fn symmetrize_q1() {
        let m = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 4.0]]).unwrap();
        let s = symmetrize_paired(&m, idx(1)).unwrap();
        assert_eq!(s.to_rows(), vec![vec![3.0, 1.0], vec![1.0, 3.0]]);
    }

    #[test]
    fn fully_symmetric_is_fixed_point() {
        // LL = RR, LR = RL
        let m = SymMatrix::from_rows(&[
            vec![2.0, 0.3, 0.1, 0.4],
            vec![0.3, 1.5, 0.4, -0.2],
            vec![0.1, 0.4, 2.0, 0.3],
            vec![0.4, -0.2, 0.3, 1.5],
        ])
        .unwrap();
        assert_eq!(swap_blocks(&m, idx(2)).unwrap(), m);
        assert_eq!(symmetrize_paired(&m, idx(2)).unwrap(), m);
    }

    #[test]
    fn log_likelihood_values() {
        let l = log_likelihood(&SymMatrix::identity(3), &SymMatrix::identity(3)).unwrap();
        assert_abs_diff_eq!(l, -3.0, epsilon = 1e-14);
        let two = &SymMatrix::identity(2) * 2.0;
        let l = log_likelihood(&two, &SymMatrix::identity(2)).unwrap();
        assert_abs_diff_eq!(l, 2.0 * 2f64.ln() - 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(l, -2.6137, epsilon = 1e-4);
    }

    #[test]
    fn log_likelihood_rejects_indefinite() {
        let m = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(log_likelihood(&m, &SymMatrix::identity(2)), Err(PdError::NotPositiveDefinite));
    }

    #[test]
    fn from_dmatrix_rejects_asymmetry() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(SymMatrix::from_dmatrix(m), Err(PdError::NotSymmetric(_))));
    }

    // Cofactor expansion, independent of the Cholesky route.
    fn det_cofactor(m: &[Vec<f64>]) -> f64 {
        let n = m.len();
        if n == 1 {
            return m[0][0];
        }
        (0..n)
            .map(|c| {
                let minor: Vec<Vec<f64>> = m[1..]
                    .iter()
                    .map(|row| row.iter().enumerate().filter(|(k, _)| *k != c).map(|(_, v)| *v).collect())
                    .collect();
                let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[0][c] * det_cofactor(&minor)
            })
            .sum()
    }

    fn arb_sym(p: usize) -> impl Strategy<Value = SymMatrix> {
        proptest::collection::vec(-1.0f64..1.0, p * p)
            .prop_map(move |v| SymMatrix::symmetrized(DMatrix::from_vec(p, p, v)))
    }

    fn arb_pd(p: usize) -> impl Strategy<Value = SymMatrix> {
        proptest::collection::vec(-1.0f64..1.0, p * p).prop_map(move |v| {
            let a = DMatrix::from_vec(p, p, v);
            SymMatrix::symmetrized(&a * a.transpose() + DMatrix::identity(p, p) * 0.5)
        })
    }

    proptest! {
        #[test]
        fn vec_round_trip(q in 1usize..=10, seed in proptest::collection::vec(-5.0f64..5.0, 400)) {
            let ix = idx(q);
            let p = ix.p();
            let m = SymMatrix::symmetrized(DMatrix::from_fn(p, p, |i, j| seed[(i * p + j) % seed.len()] + i as f64 - j as f64));
            let v = pd_vec(&m, ix).unwrap();
            prop_assert_eq!(v.len(), p * (p + 1) / 2);
            prop_assert_eq!(pd_unvec(&v, ix).unwrap(), m);
            let w = PdVec::from_vec(seed[..ix.vec_len()].to_vec(), ix).unwrap();
            prop_assert_eq!(pd_vec(&pd_unvec(&w, ix).unwrap(), ix).unwrap(), w);
        }

        #[test]
        fn swap_is_involution_and_symmetrize_commutes(m in arb_sym(6)) {
            let ix = idx(3);
            let sw = swap_blocks(&m, ix).unwrap();
            prop_assert_eq!(swap_blocks(&sw, ix).unwrap(), m.clone());
            let sym = symmetrize_paired(&m, ix).unwrap();
            prop_assert_eq!(swap_blocks(&sym, ix).unwrap(), sym.clone());
            prop_assert_eq!(symmetrize_paired(&sym, ix).unwrap(), sym.clone());
            prop_assert_eq!(symmetrize_paired(&sw, ix).unwrap(), sym);
        }

        #[test]
        fn symmetrize_keeps_pd(m in arb_pd(6)) {
            let sym = symmetrize_paired(&m, idx(3)).unwrap();
            prop_assert!(sym.min_eigenvalue() > 0.0);
        }

        #[test]
        fn likelihood_matches_cofactor_oracle(t in arb_pd(4), s in arb_pd(4)) {
            let naive_det = det_cofactor(&t.to_rows());
            let mut trace = 0.0;
            for i in 0..4 { for k in 0..4 { trace += s.get(i, k) * t.get(k, i); } }
            let expected = naive_det.ln() - trace;
            let got = log_likelihood(&t, &s).unwrap();
            prop_assert!((got - expected).abs() <= 1e-10 * expected.abs().max(1.0));
        }

        #[test]
        fn likelihood_swap_equivariant(t in arb_pd(6), s in arb_pd(6)) {
            let ix = idx(3);
            let a = log_likelihood(&t, &s).unwrap();
            let b = log_likelihood(&swap_blocks(&t, ix).unwrap(), &swap_blocks(&s, ix).unwrap()).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
