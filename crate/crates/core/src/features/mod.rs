//! Structural features of a graph's topology: hop-distance buckets, random-walk
//! probabilities and the spectrum of the normalized Magnetic Laplacian.
//!
//! All feature math runs in `f64`; the model casts to its own precision afterwards.

mod cmat;
mod eigen;

use std::collections::VecDeque;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::TextAttributedGraph;

pub use cmat::CMat;
pub use eigen::{hermitian_eigendecomposition, HERMITIAN_TOL, STOP_TOL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal {off_diagonal:e})")]
    ConvergenceFailure { sweeps: usize, off_diagonal: f64 },
    #[error("matrix is not Hermitian (defect {defect:e})")]
    NotHermitian { defect: f64 },
}

/// Knobs shared by every feature family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub max_spd: usize,
    pub rrwp_steps: usize,
    pub mag_q: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { max_spd: 8, rrwp_steps: 16, mag_q: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralFeatures {
    pub n: usize,
    pub max_spd: usize,
    pub rrwp_steps: usize,
    /// `spd[u][v]`: hop bucket, `max_spd` for unreachable pairs.
    pub spd: Vec<Vec<usize>>,
    /// Flat `(u·n + v)·K + k` layout, i.e. an `n² × K` matrix of walk-probability rows.
    pub rrwp: Vec<f64>,
    pub mag_eigvals: Vec<f64>,
    /// Eigenvectors as columns.
    pub mag_eigvecs: CMat,
}

impl StructuralFeatures {
    pub fn rrwp_at(&self, u: usize, v: usize, k: usize) -> f64 {
        self.rrwp[(u * self.n + v) * self.rrwp_steps + k]
    }
}

pub fn compute_features(g: &TextAttributedGraph, cfg: &FeatureConfig) -> Result<StructuralFeatures, FeatureError> {
    let spd = shortest_path_distances(g, cfg.max_spd);
    let rrwp = rrwp(g, cfg.rrwp_steps);
    let l = magnetic_laplacian(g, cfg.mag_q);
    let (mag_eigvals, mag_eigvecs) = hermitian_eigendecomposition(&l)?;
    Ok(StructuralFeatures {
        n: g.n_nodes(),
        max_spd: cfg.max_spd,
        rrwp_steps: cfg.rrwp_steps,
        spd,
        rrwp,
        mag_eigvals,
        mag_eigvecs,
    })
}

/// BFS hop counts on the undirected view, clamped to `max_spd − 1`; unreachable pairs get `max_spd`.
pub fn shortest_path_distances(g: &TextAttributedGraph, max_spd: usize) -> Vec<Vec<usize>> {
    assert!(max_spd >= 2, "max_spd must be at least 2");
    let n = g.n_nodes();
    let nb = g.undirected_neighbors();
    let mut out = vec![vec![max_spd; n]; n];
    for (s, row) in out.iter_mut().enumerate() {
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &nb[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for (v, &d) in dist.iter().enumerate() {
            if d != usize::MAX {
                row[v] = d.min(max_spd - 1);
            }
        }
    }
    out
}

/// `[I, M, M², …, M^{K−1}]` with `M = D⁻¹A` over out-degrees; zero out-degree rows stay zero.
pub fn rrwp(g: &TextAttributedGraph, steps: usize) -> Vec<f64> {
    assert!(steps >= 1, "rrwp needs at least one step");
    let n = g.n_nodes();
    let out_nb = g.out_neighbors();
    let mut out = vec![0.0; n * n * steps];
    // power = M^k, advanced one step at a time by right-multiplying with M (sparse rows)
    let mut power: Vec<f64> = (0..n * n).map(|i| if i / n == i % n { 1.0 } else { 0.0 }).collect();
    for k in 0..steps {
        for (i, &p) in power.iter().enumerate() {
            out[i * steps + k] = p;
        }
        if k + 1 == steps {
            break;
        }
        let mut next = vec![0.0; n * n];
        for u in 0..n {
            for w in 0..n {
                let p = power[u * n + w];
                if p == 0.0 || out_nb[w].is_empty() {
                    continue;
                }
                let share = p / out_nb[w].len() as f64;
                for &v in &out_nb[w] {
                    next[u * n + v] += share;
                }
            }
        }
        power = next;
    }
    out
}

/// `L = I − (D_s^{-1/2} A_s D_s^{-1/2}) ⊙ exp(iΘ)` with `Θ(u,v) = 2πq(A(u,v) − A(v,u))`.
/// Isolated nodes keep a unit diagonal and zero off-diagonals.
pub fn magnetic_laplacian(g: &TextAttributedGraph, q: f64) -> CMat {
    let n = g.n_nodes();
    let a = g.adjacency();
    let sym = |u: usize, v: usize| 0.5 * (a[u][v] + a[v][u]);
    let deg: Vec<f64> = (0..n).map(|u| (0..n).map(|v| sym(u, v)).sum()).collect();
    let inv_sqrt: Vec<f64> = deg.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let mut l = CMat::identity(n);
    for u in 0..n {
        for v in 0..n {
            let w = sym(u, v) * inv_sqrt[u] * inv_sqrt[v];
            if w == 0.0 {
                continue;
            }
            let theta = 2.0 * PI * q * (a[u][v] - a[v][u]);
            let h = Complex64::from_polar(w, theta);
            l.set(u, v, l.get(u, v) - h);
        }
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> TextAttributedGraph {
        let texts: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        TextAttributedGraph::from_texts(&refs, edges).unwrap()
    }

    #[test]
    fn spd_path_and_sentinel() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let d = shortest_path_distances(&g, 8);
        assert_eq!(d[0][2], 2);
        assert_eq!(d[2][0], 2);
        for u in 0..3 {
            assert_eq!(d[u][u], 0);
        }
        let g = graph(2, &[]);
        assert_eq!(shortest_path_distances(&g, 8)[0][1], 8);
    }

    #[test]
    fn spd_clamps_long_paths() {
        let edges: Vec<_> = (0..5).map(|i| (i, i + 1)).collect();
        let g = graph(6, &edges);
        let d = shortest_path_distances(&g, 3);
        assert_eq!(d[0][1], 1);
        assert_eq!(d[0][2], 2);
        assert_eq!(d[0][5], 2);
    }

    fn at(n: usize, steps: usize, u: usize, v: usize, k: usize) -> usize {
        (u * n + v) * steps + k
    }

    #[test]
    fn rrwp_undirected_edge_alternates() {
        let g = graph(2, &[(0, 1), (1, 0)]);
        let f = rrwp(&g, 6);
        let row: Vec<f64> = (0..6).map(|k| f[at(2, 6, 0, 1, k)]).collect();
        assert_eq!(row, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn rrwp_directed_edge_zero_row() {
        let g = graph(2, &[(0, 1)]);
        let f = rrwp(&g, 5);
        for k in 0..5 {
            assert_eq!(f[at(2, 5, 1, 0, k)], 0.0);
        }
        // stranded mass: M² row 0 is zero because node 1 absorbs
        assert_eq!(f[at(2, 5, 0, 1, 1)], 1.0);
        assert_eq!(f[at(2, 5, 0, 1, 2)], 0.0);
    }

    #[test]
    fn magnetic_single_directed_edge() {
        let g = graph(2, &[(0, 1)]);
        let l = magnetic_laplacian(&g, 0.25);
        assert!((l.get(0, 1) - Complex64::new(0.0, -1.0)).norm() < 1e-15);
        assert!((l.get(1, 0) - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        assert_eq!(l.get(0, 0), Complex64::new(1.0, 0.0));
        let (vals, _) = hermitian_eigendecomposition(&l).unwrap();
        assert!(vals[0].abs() < 1e-14 && (vals[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn magnetic_undirected_is_real() {
        let g = graph(3, &[(0, 1), (1, 0), (1, 2), (2, 1)]);
        let l = magnetic_laplacian(&g, 0.37);
        assert!(l.data.iter().all(|z| z.im == 0.0));
    }

    #[test]
    fn magnetic_q_zero_is_normalized_laplacian() {
        let g = graph(4, &[(0, 1), (1, 2), (3, 1)]);
        let l = magnetic_laplacian(&g, 0.0);
        // symmetrized weights 1/2 per edge; degrees 0.5, 1.5, 0.5, 0.5
        let d = [0.5, 1.5, 0.5, 0.5];
        let expect = |u: usize, v: usize| -> f64 {
            if u == v {
                return 1.0;
            }
            let adj = [(0, 1), (1, 2), (3, 1)].iter().any(|&(a, b)| (a, b) == (u, v) || (b, a) == (u, v));
            if adj { -0.5 / (d[u] * d[v] as f64).sqrt() } else { 0.0 }
        };
        for u in 0..4 {
            for v in 0..4 {
                assert!((l.get(u, v) - Complex64::new(expect(u, v), 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn isolated_node_is_spectrally_inert() {
        let g = graph(3, &[(0, 1)]);
        let l = magnetic_laplacian(&g, 0.25);
        assert_eq!(l.get(2, 2), Complex64::new(1.0, 0.0));
        assert_eq!(l.get(2, 0), Complex64::new(0.0, 0.0));
    }

    fn arb_digraph() -> impl Strategy<Value = TextAttributedGraph> {
        (1usize..10).prop_flat_map(|n| {
            proptest::collection::btree_set((0..n, 0..n), 0..(n * n)).prop_map(move |set| {
                let edges: Vec<_> = set.into_iter().filter(|(a, b)| a != b).collect();
                graph(n, &edges)
            })
        })
    }

    proptest! {
        #[test]
        fn rrwp_identity_and_row_mass(g in arb_digraph()) {
            let n = g.n_nodes();
            let k = 6;
            let f = rrwp(&g, k);
            for u in 0..n {
                for v in 0..n {
                    prop_assert_eq!(f[(u * n + v) * k], if u == v { 1.0 } else { 0.0 });
                }
                // mass can only leak into sinks, never grow
                let mut prev = 1.0;
                for s in 0..k {
                    let mass: f64 = (0..n).map(|v| f[(u * n + v) * k + s]).sum();
                    prop_assert!(mass <= prev + 1e-12);
                    prev = mass;
                }
            }
            prop_assert!(f.iter().all(|&p| (0.0..=1.0 + 1e-12).contains(&p)));
        }

        #[test]
        fn spd_symmetric_zero_diagonal(g in arb_digraph()) {
            let d = shortest_path_distances(&g, 8);
            for u in 0..g.n_nodes() {
                prop_assert_eq!(d[u][u], 0);
                for v in 0..g.n_nodes() {
                    prop_assert_eq!(d[u][v], d[v][u]);
                }
            }
        }

        #[test]
        fn magnetic_hermitian_psd(g in arb_digraph(), q in 0.0f64..0.5) {
            let l = magnetic_laplacian(&g, q);
            prop_assert!(l.hermitian_defect() <= 1e-12);
            let (vals, vecs) = hermitian_eigendecomposition(&l).unwrap();
            prop_assert!(vals[0] >= -1e-9);
            prop_assert!(*vals.last().unwrap() <= 2.0 + 1e-9);
            prop_assert!(CMat::from_spectrum(&vals, &vecs).max_abs_diff(&l) <= 1e-8);
        }

        #[test]
        fn reversal_conjugates(g in arb_digraph()) {
            let mut rev = g.clone();
            rev.edges = g.edges.iter().map(|&(s, d)| (d, s)).collect();
            let l = magnetic_laplacian(&g, 0.25);
            let lr = magnetic_laplacian(&rev, 0.25);
            prop_assert!(lr.max_abs_diff(&l.conj()) <= 1e-12);
        }
    }
}
