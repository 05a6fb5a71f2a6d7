//! Test-only helpers: random inputs and a proximal-gradient oracle for the
//! penalized objective that shares no code with the ADMM path.
#![allow(dead_code)]

use nalgebra::DMatrix;
use pdglasso::model::EdgeState;
use pdglasso::{PairedIndex, PdColouredGraph, SymMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Sample covariance of `n` draws from a random correlated Gaussian.
pub fn random_cov(p: usize, n: usize, rng: &mut ChaCha20Rng) -> SymMatrix {
    let mix = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rng.random_range(-0.4..0.4) });
    let z = DMatrix::from_fn(n, p, |_, _| {
        // Box-Muller
        let u1: f64 = rng.random_range(1e-12..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    });
    let y = z * mix.transpose();
    SymMatrix::symmetrized(y.transpose() * &y / n as f64)
}

/// Random positive definite matrix with a controlled spectrum.
pub fn random_pd(p: usize, rng: &mut ChaCha20Rng) -> SymMatrix {
    let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    SymMatrix::symmetrized(&a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5)
}

/// Per-entry penalties for the oracle, in full-matrix form.
pub struct OraclePenalty {
    pub lambda1: f64,
    pub penalize_diagonal: bool,
    pub vertex: f64,
    pub inside: f64,
    pub across: f64,
}

fn soft(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// argmin 1/2 (z1-a1)^2 + 1/2 (z2-a2)^2 + c1|z1| + c2|z2| + w|z1-z2| by
/// enumerating every active pattern and keeping the best candidate.
pub fn pair_prox(a1: f64, a2: f64, c1: f64, c2: f64, w: f64) -> (f64, f64) {
    let obj = |z1: f64, z2: f64| {
        0.5 * (z1 - a1).powi(2) + 0.5 * (z2 - a2).powi(2) + c1 * z1.abs() + c2 * z2.abs() + w * (z1 - z2).abs()
    };
    let mut cands = vec![(0.0, 0.0), (0.0, soft(a2, c2 + w)), (soft(a1, c1 + w), 0.0)];
    let m = soft(0.5 * (a1 + a2), 0.5 * (c1 + c2));
    cands.push((m, m));
    for s1 in [-1.0, 1.0] {
        for s2 in [-1.0, 1.0] {
            for s12 in [-1.0, 1.0] {
                cands.push((a1 - c1 * s1 - w * s12, a2 - c2 * s2 + w * s12));
            }
        }
    }
    cands.into_iter().min_by(|x, y| obj(x.0, x.1).partial_cmp(&obj(y.0, y.1)).unwrap()).unwrap()
}

/// Full-matrix prox of `t * penalty` at `a` (Frobenius metric).
pub fn matrix_prox(a: &DMatrix<f64>, q: usize, pen: &OraclePenalty, t: f64) -> DMatrix<f64> {
    let mut z = a.clone();
    let l1 = pen.lambda1 * t;
    let l1d = if pen.penalize_diagonal { l1 } else { 0.0 };
    for i in 0..q {
        let (x, y) = pair_prox(a[(i, i)], a[(i + q, i + q)], l1d, l1d, pen.vertex * t);
        z[(i, i)] = x;
        z[(i + q, i + q)] = y;
        z[(i, i + q)] = soft(a[(i, i + q)], l1);
        z[(i + q, i)] = z[(i, i + q)];
    }
    for i in 0..q {
        for j in i + 1..q {
            let (x, y) = pair_prox(a[(i, j)], a[(i + q, j + q)], l1, l1, pen.inside * t);
            z[(i, j)] = x;
            z[(j, i)] = x;
            z[(i + q, j + q)] = y;
            z[(j + q, i + q)] = y;
            let (x, y) = pair_prox(a[(i, j + q)], a[(i + q, j)], l1, l1, pen.across * t);
            z[(i, j + q)] = x;
            z[(j + q, i)] = x;
            z[(i + q, j)] = y;
            z[(j, i + q)] = y;
        }
    }
    z
}

fn penalty_value(th: &DMatrix<f64>, q: usize, pen: &OraclePenalty) -> f64 {
    let mut v = 0.0;
    for i in 0..2 * q {
        for j in 0..2 * q {
            if i != j || pen.penalize_diagonal {
                v += pen.lambda1 * th[(i, j)].abs();
            }
        }
    }
    for i in 0..q {
        v += pen.vertex * (th[(i, i)] - th[(i + q, i + q)]).abs();
        for j in 0..q {
            if i != j {
                v += pen.inside * (th[(i, j)] - th[(i + q, j + q)]).abs();
            }
            v += pen.across * (th[(i, j + q)] - th[(i + q, j)]).abs();
        }
    }
    v
}

fn smooth(th: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<f64> {
    let chol = th.clone().cholesky()?;
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Some(-logdet + s.component_mul(th).sum())
}

/// Proximal gradient with backtracking on the penalized negative
/// log-likelihood, started from the inverse of the regularized diagonal.
pub fn prox_gradient_oracle(s: &SymMatrix, q: usize, pen: &OraclePenalty) -> SymMatrix {
    let p = 2 * q;
    let sm = s.as_matrix().clone();
    let mut th = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 / (sm[(i, i)] + pen.lambda1) } else { 0.0 });
    let mut t = 1.0;
    for _ in 0..200_000 {
        let f0 = smooth(&th, &sm).unwrap();
        let inv = th.clone().cholesky().unwrap().inverse();
        let grad = &sm - &inv;
        let mut step = t * 1.5;
        let next = loop {
            let cand = matrix_prox(&(&th - &grad * step), q, pen, step);
            if let Some(f1) = smooth(&cand, &sm) {
                let d = &cand - &th;
                if f1 <= f0 + grad.component_mul(&d).sum() + d.norm_squared() / (2.0 * step) + 1e-15 {
                    break cand;
                }
            }
            step *= 0.5;
            assert!(step > 1e-14, "oracle line search failed");
        };
        t = step;
        let change = (&next - &th).amax();
        th = next;
        if change < 1e-13 {
            break;
        }
    }
    SymMatrix::symmetrized(th)
}

pub fn oracle_objective(th: &SymMatrix, s: &SymMatrix, q: usize, pen: &OraclePenalty) -> f64 {
    smooth(th.as_matrix(), s.as_matrix()).unwrap_or(f64::INFINITY) + penalty_value(th.as_matrix(), q, pen)
}

pub fn idx(q: usize) -> PairedIndex {
    PairedIndex::new(q).unwrap()
}

/// GGM maximum likelihood by iterative proportional scaling over every
/// edge and vertex of `edges`, independent of the ADMM path.
pub fn ips_oracle(s: &SymMatrix, edges: &[(usize, usize)]) -> SymMatrix {
    let p = s.dim();
    let s = s.as_matrix();
    let mut sets: Vec<Vec<usize>> = (0..p).map(|i| vec![i]).collect();
    sets.extend(edges.iter().map(|&(i, j)| vec![i, j]));
    let mut theta = DMatrix::<f64>::identity(p, p);
    for _ in 0..100_000 {
        let mut change: f64 = 0.0;
        for c in &sets {
            let sigma = theta.clone().try_inverse().unwrap();
            let k = c.len();
            let sub = |m: &DMatrix<f64>| DMatrix::from_fn(k, k, |a, b| m[(c[a], c[b])]);
            let upd = sub(s).try_inverse().unwrap() - sub(&sigma).try_inverse().unwrap();
            for a in 0..k {
                for b in 0..k {
                    theta[(c[a], c[b])] += upd[(a, b)];
                    change = change.max(upd[(a, b)].abs());
                }
            }
        }
        if change < 1e-13 {
            break;
        }
    }
    SymMatrix::symmetrized(theta)
}

/// Random pdRCON graph: each edge present with probability `edge`, each
/// vertex and each doubly present pair coloured with probability `colour`.
pub fn random_coloured_graph(q: usize, edge: f64, colour: f64, rng: &mut ChaCha20Rng) -> PdColouredGraph {
    let idx = idx(q);
    let p = idx.p();
    let mut g = PdColouredGraph::empty(idx);
    for i in 0..p {
        for j in i + 1..p {
            if rng.random_bool(edge) {
                g.set_edge(i, j, true).unwrap();
            }
        }
    }
    for v in g.vertex_coloured.iter_mut() {
        *v = rng.random_bool(colour);
    }
    for e in g.inside.iter_mut().chain(g.across.iter_mut()) {
        if *e == EdgeState::Present && rng.random_bool(colour) {
            *e = EdgeState::Coloured;
        }
    }
    g
}

/// Random fully symmetric graph: each pair absent or coloured.
pub fn random_symmetric_graph(q: usize, edge: f64, rng: &mut ChaCha20Rng) -> PdColouredGraph {
    let mut g = PdColouredGraph::empty(idx(q));
    g.vertex_coloured = vec![true; q];
    for e in g.inside.iter_mut().chain(g.across.iter_mut()) {
        if rng.random_bool(edge) {
            *e = EdgeState::Coloured;
        }
    }
    for d in g.across_diag.iter_mut() {
        *d = rng.random_bool(edge);
    }
    g
}

/// Worked examples of coloured graphs at `q = 3`; variables 1, 2, 3 are
/// indices 0, 1, 2.
pub fn example_graphs() -> Vec<(&'static str, PdColouredGraph)> {
    let i = idx(3);
    let (p12, p13, p23) = (i.pair_index(0, 1), i.pair_index(0, 2), i.pair_index(1, 2));
    let mut out = Vec::new();

    let mut g = PdColouredGraph::empty(i);
    g.inside[p12] = EdgeState::Present;
    g.inside[p23] = EdgeState::Coloured;
    g.vertex_coloured[0] = true;
    out.push(("structural and parametric inside symmetries", g));

    let mut g = PdColouredGraph::empty(i);
    for k in [p12, p13, p23] {
        g.inside[k] = EdgeState::SecondOnly;
    }
    g.across[p12] = EdgeState::Coloured;
    g.across[p23] = EdgeState::Present;
    out.push(("empty left block, complete right block", g));

    let mut g = PdColouredGraph::empty(i);
    g.vertex_coloured = vec![true; 3];
    g.across[p12] = EdgeState::Coloured;
    g.across[p23] = EdgeState::Coloured;
    g.inside[p12] = EdgeState::Present;
    g.inside[p23] = EdgeState::Present;
    g.across_diag[0] = true;
    g.across_diag[1] = true;
    out.push(("coloured vertices and across pairs", g.clone()));

    g.inside[p12] = EdgeState::Coloured;
    g.inside[p23] = EdgeState::Coloured;
    out.push(("fully symmetric with across-diagonal edges", g));
    out
}
