use serde::{Deserialize, Serialize};

use crate::admm::{FusedKind, PenaltyWeights};
use crate::error::{PdError, Result};
use crate::paired::{PairedIndex, SymMatrix};

/// State of a symmetric pair of edges.
///
/// For an inside pair `{i, j}` the first edge lives in the LL block and the
/// second in RR. For an across pair `{i, j'}` / `{i', j}` (`i < j`) the
/// first edge is `{i, j'}` and the second `{i', j}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeState {
    Absent,
    FirstOnly,
    SecondOnly,
    /// Both present, concentrations free.
    Present,
    /// Both present, concentrations equal.
    Coloured,
}

impl EdgeState {
    pub fn from_presence(first: bool, second: bool) -> Self {
        match (first, second) {
            (false, false) => EdgeState::Absent,
            (true, false) => EdgeState::FirstOnly,
            (false, true) => EdgeState::SecondOnly,
            (true, true) => EdgeState::Present,
        }
    }

    pub fn first(self) -> bool {
        matches!(self, EdgeState::FirstOnly | EdgeState::Present | EdgeState::Coloured)
    }

    pub fn second(self) -> bool {
        matches!(self, EdgeState::SecondOnly | EdgeState::Present | EdgeState::Coloured)
    }

    pub fn n_edges(self) -> usize {
        self.first() as usize + self.second() as usize
    }

    /// Both edges present or both absent.
    pub fn is_structurally_symmetric(self) -> bool {
        self.first() == self.second()
    }

    fn with_edge(self, first: bool, present: bool) -> Self {
        let (mut a, mut b) = (self.first(), self.second());
        if first {
            a = present;
        } else {
            b = present;
        }
        if self == EdgeState::Coloured && a && b {
            return EdgeState::Coloured;
        }
        EdgeState::from_presence(a, b)
    }
}

/// Where an off-diagonal matrix entry sits in a [`PdColouredGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeSlot {
    Inside { pair: usize, first: bool },
    Across { pair: usize, first: bool },
    AcrossDiag(usize),
}

/// Coloured graph of a pdRCON model.
///
/// Inside and across vectors are indexed by [`PairedIndex::pair_index`].
/// A `Coloured` state always has both edges present; `across_diag` edges
/// `{i, i'}` carry no colour.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PdColouredGraph {
    pub q: usize,
    pub vertex_coloured: Vec<bool>,
    pub inside: Vec<EdgeState>,
    pub across: Vec<EdgeState>,
    pub across_diag: Vec<bool>,
}

impl PdColouredGraph {
    pub fn empty(idx: PairedIndex) -> Self {
        Self {
            q: idx.q(),
            vertex_coloured: vec![false; idx.q()],
            inside: vec![EdgeState::Absent; idx.s()],
            across: vec![EdgeState::Absent; idx.s()],
            across_diag: vec![false; idx.q()],
        }
    }

    /// Every edge present, no colours.
    pub fn complete(idx: PairedIndex) -> Self {
        Self {
            q: idx.q(),
            vertex_coloured: vec![false; idx.q()],
            inside: vec![EdgeState::Present; idx.s()],
            across: vec![EdgeState::Present; idx.s()],
            across_diag: vec![true; idx.q()],
        }
    }

    /// Uncoloured graph with the given edges (`(i, j)` with `i != j < p`).
    pub fn from_edges(idx: PairedIndex, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(idx);
        for &(i, j) in edges {
            g.set_edge(i, j, true)?;
        }
        Ok(g)
    }

    pub fn index(&self) -> PairedIndex {
        PairedIndex::new(self.q).expect("graph with q >= 1")
    }

    pub fn p(&self) -> usize {
        2 * self.q
    }

    pub fn validate(&self) -> Result<()> {
        let idx = PairedIndex::new(self.q)?;
        let (q, s) = (idx.q(), idx.s());
        for (len, want) in [
            (self.vertex_coloured.len(), q),
            (self.inside.len(), s),
            (self.across.len(), s),
            (self.across_diag.len(), q),
        ] {
            if len != want {
                return Err(PdError::DimensionMismatch { expected: want, found: len });
            }
        }
        Ok(())
    }

    /// Locates the entry `(i, j)`, `i != j`.
    pub fn slot(&self, i: usize, j: usize) -> Result<EdgeSlot> {
        let (q, p) = (self.q, self.p());
        if i == j || i >= p || j >= p {
            return Err(PdError::InvalidArgument(format!(
                "({i}, {j}) is not an off-diagonal entry of a {p}x{p} matrix"
            )));
        }
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        let idx = self.index();
        Ok(if j < q {
            EdgeSlot::Inside { pair: idx.pair_index(i, j), first: true }
        } else if i >= q {
            EdgeSlot::Inside { pair: idx.pair_index(i - q, j - q), first: false }
        } else {
            let jr = j - q;
            if jr == i {
                EdgeSlot::AcrossDiag(i)
            } else if i < jr {
                EdgeSlot::Across { pair: idx.pair_index(i, jr), first: true }
            } else {
                EdgeSlot::Across { pair: idx.pair_index(jr, i), first: false }
            }
        })
    }

    pub fn has_edge(&self, i: usize, j: usize) -> Result<bool> {
        Ok(match self.slot(i, j)? {
            EdgeSlot::Inside { pair, first } => edge_of(self.inside[pair], first),
            EdgeSlot::Across { pair, first } => edge_of(self.across[pair], first),
            EdgeSlot::AcrossDiag(i) => self.across_diag[i],
        })
    }

    /// Adds or removes one edge; removing an edge drops its pair's colour.
    pub fn set_edge(&mut self, i: usize, j: usize, present: bool) -> Result<()> {
        match self.slot(i, j)? {
            EdgeSlot::Inside { pair, first } => self.inside[pair] = self.inside[pair].with_edge(first, present),
            EdgeSlot::Across { pair, first } => self.across[pair] = self.across[pair].with_edge(first, present),
            EdgeSlot::AcrossDiag(i) => self.across_diag[i] = present,
        }
        Ok(())
    }

    /// Present edges `(i, j)`, `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let p = self.p();
        let mut out = Vec::new();
        for i in 0..p {
            for j in i + 1..p {
                if self.has_edge(i, j).unwrap_or(false) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Upper-triangle adjacency in row-major order, length `p(p-1)/2`.
    pub fn adjacency(&self) -> Vec<bool> {
        let p = self.p();
        let mut out = Vec::with_capacity(p * (p - 1) / 2);
        for i in 0..p {
            for j in i + 1..p {
                out.push(self.has_edge(i, j).unwrap_or(false));
            }
        }
        out
    }

    pub fn n_edges(&self) -> usize {
        self.inside.iter().chain(&self.across).map(|e| e.n_edges()).sum::<usize>()
            + self.across_diag.iter().filter(|&&b| b).count()
    }

    /// Every vertex coloured and every pair either absent or coloured.
    pub fn is_fully_symmetric(&self) -> bool {
        self.vertex_coloured.iter().all(|&c| c)
            && self.inside.iter().chain(&self.across).all(|e| matches!(e, EdgeState::Absent | EdgeState::Coloured))
    }

    /// Same edges with every colour removed.
    pub fn uncoloured(&self) -> Self {
        let strip = |e: &EdgeState| if *e == EdgeState::Coloured { EdgeState::Present } else { *e };
        Self {
            q: self.q,
            vertex_coloured: vec![false; self.q],
            inside: self.inside.iter().map(strip).collect(),
            across: self.across.iter().map(strip).collect(),
            across_diag: self.across_diag.clone(),
        }
    }

    /// Checks that every constraint of `full` also holds in `self`.
    ///
    /// Errors with the first violating constraint.
    pub fn check_nested_in(&self, full: &PdColouredGraph) -> Result<()> {
        self.validate()?;
        full.validate()?;
        if self.q != full.q {
            return Err(PdError::DimensionMismatch { expected: full.q, found: self.q });
        }
        let p = self.p();
        for i in 0..p {
            for j in i + 1..p {
                if !full.has_edge(i, j)? && self.has_edge(i, j)? {
                    return Err(PdError::NotNested(format!(
                        "edge ({i}, {j}) is absent in the larger model but present in the submodel"
                    )));
                }
            }
        }
        for i in 0..self.q {
            if full.vertex_coloured[i] && !self.vertex_coloured[i] {
                return Err(PdError::NotNested(format!("vertex {i} is coloured in the larger model only")));
            }
        }
        let idx = self.index();
        for (fam, a, b) in [("inside", &full.inside, &self.inside), ("across", &full.across, &self.across)] {
            for ((i, j), (fe, se)) in idx.pairs().zip(a.iter().zip(b)) {
                if *fe == EdgeState::Coloured && !matches!(se, EdgeState::Coloured | EdgeState::Absent) {
                    return Err(PdError::NotNested(format!(
                        "{fam} pair ({i}, {j}) is coloured in the larger model only"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn edge_of(e: EdgeState, first: bool) -> bool {
    if first {
        e.first()
    } else {
        e.second()
    }
}

/// Families in which colours are read off an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColourMask {
    pub vertex: bool,
    pub inside: bool,
    pub across: bool,
}

impl ColourMask {
    pub const ALL: ColourMask = ColourMask { vertex: true, inside: true, across: true };
    pub const NONE: ColourMask = ColourMask { vertex: false, inside: false, across: false };
}

/// `1e-5 * max(1, max |theta|)`.
pub fn default_tolerance(theta: &SymMatrix) -> f64 {
    1e-5 * theta.max_abs().max(1.0)
}

/// Reads the coloured graph off an estimate.
pub fn extract_graph(theta: &SymMatrix, idx: PairedIndex, zero_tol: f64, eq_tol: f64) -> Result<PdColouredGraph> {
    extract_graph_masked(theta, idx, zero_tol, eq_tol, ColourMask::ALL)
}

/// [`extract_graph`] reading colours only in the families set in `mask`.
pub fn extract_graph_masked(
    theta: &SymMatrix,
    idx: PairedIndex,
    zero_tol: f64,
    eq_tol: f64,
    mask: ColourMask,
) -> Result<PdColouredGraph> {
    idx.check_dim(theta)?;
    if !(zero_tol > 0.0) || !(eq_tol > 0.0) {
        return Err(PdError::InvalidArgument("tolerances must be > 0".into()));
    }
    let q = idx.q();
    let mut g = PdColouredGraph::empty(idx);
    let state = |a: f64, b: f64, colour: bool| {
        let e = EdgeState::from_presence(a.abs() > zero_tol, b.abs() > zero_tol);
        if colour && e == EdgeState::Present && (a - b).abs() <= eq_tol {
            EdgeState::Coloured
        } else {
            e
        }
    };
    for i in 0..q {
        g.vertex_coloured[i] = mask.vertex && (theta.get(i, i) - theta.get(i + q, i + q)).abs() <= eq_tol;
        g.across_diag[i] = theta.get(i, i + q).abs() > zero_tol;
    }
    for (k, (i, j)) in idx.pairs().enumerate() {
        g.inside[k] = state(theta.get(i, j), theta.get(i + q, j + q), mask.inside);
        g.across[k] = state(theta.get(i, j + q), theta.get(i + q, j), mask.across);
    }
    Ok(g)
}

/// Free parameters: `p(p+1)/2` minus absent edges minus one per colour.
pub fn n_params(g: &PdColouredGraph) -> usize {
    let p = g.p();
    let absent = p * (p - 1) / 2 - g.n_edges();
    let colours = g.vertex_coloured.iter().filter(|&&c| c).count()
        + g.inside.iter().chain(&g.across).filter(|&&e| e == EdgeState::Coloured).count();
    p * (p + 1) / 2 - absent - colours
}

/// Exact-constraint weights: `surrogate` on every absent entry and every
/// coloured pair, all flagged hard, zero elsewhere.
pub fn constraint_weights(g: &PdColouredGraph, surrogate: f64) -> Result<PenaltyWeights> {
    g.validate()?;
    let idx = g.index();
    let lay = idx.layout();
    let s = idx.s();
    let mut w = PenaltyWeights::zero(idx);
    let mut zero = |k: usize| {
        w.lasso[k] = surrogate;
        w.lasso_hard[k] = true;
    };
    for k in 0..s {
        let (inside, across) = (g.inside[k], g.across[k]);
        if !inside.first() {
            zero(lay.upper_ll + k);
        }
        if !inside.second() {
            zero(lay.upper_rr + k);
        }
        if !across.first() {
            zero(lay.upper_lr + k);
        }
        if !across.second() {
            zero(lay.upper_rl + k);
        }
    }
    for i in 0..idx.q() {
        if !g.across_diag[i] {
            zero(lay.diag_lr + i);
        }
    }
    let rows = w.fused.n_rows();
    let mut vertex = 0;
    let mut pair = [0usize; 2];
    for r in 0..rows {
        let coloured = match w.fused.kinds()[r] {
            FusedKind::Vertex => {
                vertex += 1;
                g.vertex_coloured[vertex - 1]
            }
            FusedKind::Inside => {
                pair[0] += 1;
                g.inside[pair[0] - 1] == EdgeState::Coloured
            }
            FusedKind::Across => {
                pair[1] += 1;
                g.across[pair[1] - 1] == EdgeState::Coloured
            }
        };
        if coloured {
            w.fused.weights_mut()[r] = surrogate;
            w.fused_hard[r] = true;
        }
    }
    Ok(w)
}

/// Edge and symmetry counts of a coloured graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub edges: usize,
    pub inside_edges: usize,
    pub across_edges: usize,
    /// `edges / (p(p-1)/2)`.
    pub density: f64,
    pub coloured_vertices: usize,
    /// Both edges present without an equality constraint.
    pub inside_structural: usize,
    pub inside_parametric: usize,
    pub across_structural: usize,
    pub across_parametric: usize,
}

pub fn graph_summary(g: &PdColouredGraph) -> GraphSummary {
    let count = |v: &[EdgeState], st: EdgeState| v.iter().filter(|&&e| e == st).count();
    let inside_edges: usize = g.inside.iter().map(|e| e.n_edges()).sum();
    let across_edges =
        g.across.iter().map(|e| e.n_edges()).sum::<usize>() + g.across_diag.iter().filter(|&&b| b).count();
    let p = g.p();
    let edges = inside_edges + across_edges;
    GraphSummary {
        edges,
        inside_edges,
        across_edges,
        density: edges as f64 / (p * (p - 1) / 2) as f64,
        coloured_vertices: g.vertex_coloured.iter().filter(|&&c| c).count(),
        inside_structural: count(&g.inside, EdgeState::Present),
        inside_parametric: count(&g.inside, EdgeState::Coloured),
        across_structural: count(&g.across, EdgeState::Present),
        across_parametric: count(&g.across, EdgeState::Coloured),
    }
}
