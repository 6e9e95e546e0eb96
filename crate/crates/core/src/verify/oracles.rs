//! Brute-force re-implementations of the structural features, and the kernel basis-invariance
//! test. Nothing here calls the feature code it is compared against.

use std::f64::consts::PI;
use std::ops::Range;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Check, VerifyError};
use crate::bias::{assemble_node_bias, deepset_phi, init_bias_params, mag_kernel, BiasConfig, BiasSources};
use crate::features::{compute_features, CMat, FeatureConfig, StructuralFeatures};
use crate::graph::TextAttributedGraph;

/// Eigenvalues closer than this are treated as one degenerate block.
pub const DEGENERACY_GAP: f64 = 1e-9;
pub const FEATURE_TOL: f64 = 1e-12;
pub const RECONSTRUCTION_TOL: f64 = 1e-8;
pub const EIGENVALUE_SLACK: f64 = 1e-9;
pub const KERNEL_TOL: f64 = 1e-8;

fn dense_adjacency(g: &TextAttributedGraph) -> Vec<Vec<bool>> {
    let n = g.nodes.len();
    let mut a = vec![vec![false; n]; n];
    for &(s, d) in &g.edges {
        a[s][d] = true;
    }
    a
}

/// Floyd–Warshall on the undirected view, bucketed like the model: clamped at `max_spd − 1`,
/// `max_spd` for unreachable pairs.
pub fn oracle_spd(g: &TextAttributedGraph, max_spd: usize) -> Vec<Vec<usize>> {
    let n = g.nodes.len();
    let a = dense_adjacency(g);
    let inf = u64::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for u in 0..n {
        d[u][u] = 0;
        for v in 0..n {
            if u != v && (a[u][v] || a[v][u]) {
                d[u][v] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
            }
        }
    }
    d.iter().map(|row| row.iter().map(|&x| if x >= inf { max_spd } else { (x as usize).min(max_spd - 1) }).collect()).collect()
}

fn dense_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

/// Dense powers of the out-degree walk matrix, flattened as `(u·n + v)·K + k`.
pub fn oracle_rrwp(g: &TextAttributedGraph, steps: usize) -> Vec<f64> {
    let n = g.nodes.len();
    let a = dense_adjacency(g);
    let m: Vec<Vec<f64>> = a
        .iter()
        .map(|row| {
            let deg = row.iter().filter(|&&x| x).count();
            row.iter().map(|&x| if x { 1.0 / deg as f64 } else { 0.0 }).collect()
        })
        .collect();
    let mut p: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let mut out = vec![0.0; n * n * steps];
    for k in 0..steps {
        for u in 0..n {
            for v in 0..n {
                out[(u * n + v) * steps + k] = p[u][v];
            }
        }
        p = dense_matmul(&p, &m);
    }
    out
}

/// `L = I − D_s^{-1/2} (A_s ⊙ e^{iΘ}) D_s^{-1/2}` assembled entrywise from the edge list.
pub fn oracle_magnetic_laplacian(g: &TextAttributedGraph, q: f64) -> CMat {
    let n = g.nodes.len();
    let a = dense_adjacency(g);
    let w = |u: usize, v: usize| (f64::from(u8::from(a[u][v])) + f64::from(u8::from(a[v][u]))) / 2.0;
    let deg: Vec<f64> = (0..n).map(|u| (0..n).map(|v| w(u, v)).sum()).collect();
    let mut l = CMat::zeros(n);
    for u in 0..n {
        for v in 0..n {
            let mut x = Complex64::new(if u == v { 1.0 } else { 0.0 }, 0.0);
            if w(u, v) > 0.0 {
                let theta = 2.0 * PI * q * (f64::from(u8::from(a[u][v])) - f64::from(u8::from(a[v][u])));
                x -= Complex64::new(0.0, theta).exp() * w(u, v) / (deg[u] * deg[v]).sqrt();
            }
            l.set(u, v, x);
        }
    }
    l
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureOracleReport {
    pub spd_mismatches: usize,
    pub rrwp_delta: f64,
    pub laplacian_delta: f64,
    pub hermitian_defect: f64,
    pub eig_min: f64,
    pub eig_max: f64,
    pub reconstruction: f64,
    pub passed: bool,
}

fn reconstruction_residual(l: &CMat, f: &StructuralFeatures) -> f64 {
    let n = f.n;
    let v = &f.mag_eigvecs;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let mut s = Complex64::new(0.0, 0.0);
            for k in 0..n {
                s += v.get(i, k) * f.mag_eigvals[k] * v.get(j, k).conj();
            }
            worst = worst.max((s - l.get(i, j)).norm());
        }
    }
    worst
}

pub fn check_feature_oracles(g: &TextAttributedGraph, cfg: &FeatureConfig) -> Result<FeatureOracleReport, VerifyError> {
    let f = compute_features(g, cfg)?;
    let spd = oracle_spd(g, cfg.max_spd);
    let spd_mismatches = spd.iter().flatten().zip(f.spd.iter().flatten()).filter(|(a, b)| a != b).count();
    let rrwp_delta = oracle_rrwp(g, cfg.rrwp_steps).iter().zip(&f.rrwp).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let l = oracle_magnetic_laplacian(g, cfg.mag_q);
    let laplacian_delta = l.max_abs_diff(&crate::features::magnetic_laplacian(g, cfg.mag_q));
    let hermitian_defect = l.hermitian_defect();
    let eig_min = f.mag_eigvals.iter().copied().fold(f64::INFINITY, f64::min);
    let eig_max = f.mag_eigvals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let reconstruction = reconstruction_residual(&l, &f);
    let passed = spd_mismatches == 0
        && rrwp_delta <= FEATURE_TOL
        && laplacian_delta <= FEATURE_TOL
        && hermitian_defect <= FEATURE_TOL
        && eig_min >= -EIGENVALUE_SLACK
        && eig_max <= 2.0 + EIGENVALUE_SLACK
        && reconstruction <= RECONSTRUCTION_TOL;
    Ok(FeatureOracleReport { spd_mismatches, rrwp_delta, laplacian_delta, hermitian_defect, eig_min, eig_max, reconstruction, passed })
}

/// Directed graph on `n` nodes with each ordered pair present with probability `p`.
pub fn random_graph(rng: &mut impl Rng, n: usize, p: f64) -> TextAttributedGraph {
    let texts: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let edges: Vec<(usize, usize)> =
        (0..n).flat_map(|u| (0..n).map(move |v| (u, v))).filter(|&(u, v)| u != v).filter(|_| rng.random_bool(p)).collect();
    TextAttributedGraph::from_texts(&refs, &edges).expect("random graph is valid")
}

/// Runs [`check_feature_oracles`] on `n_graphs` random graphs of 1..=`max_n` nodes.
pub fn feature_oracle_battery(n_graphs: usize, max_n: usize, seed: u64) -> Result<Check, VerifyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = FeatureConfig::default();
    let mut worst = FeatureOracleReport {
        spd_mismatches: 0,
        rrwp_delta: 0.0,
        laplacian_delta: 0.0,
        hermitian_defect: 0.0,
        eig_min: f64::INFINITY,
        eig_max: f64::NEG_INFINITY,
        reconstruction: 0.0,
        passed: true,
    };
    for _ in 0..n_graphs {
        let n = rng.random_range(1..=max_n);
        let p = rng.random_range(0.0..0.5);
        let r = check_feature_oracles(&random_graph(&mut rng, n, p), &cfg)?;
        worst.spd_mismatches += r.spd_mismatches;
        worst.rrwp_delta = worst.rrwp_delta.max(r.rrwp_delta);
        worst.laplacian_delta = worst.laplacian_delta.max(r.laplacian_delta);
        worst.hermitian_defect = worst.hermitian_defect.max(r.hermitian_defect);
        worst.eig_min = worst.eig_min.min(r.eig_min);
        worst.eig_max = worst.eig_max.max(r.eig_max);
        worst.reconstruction = worst.reconstruction.max(r.reconstruction);
        worst.passed &= r.passed;
    }
    Ok(Check::new("feature-oracles", worst.passed)
        .metric("graphs", n_graphs as f64)
        .metric("spd_mismatches", worst.spd_mismatches as f64)
        .metric("rrwp_max_abs", worst.rrwp_delta)
        .metric("laplacian_max_abs", worst.laplacian_delta)
        .metric("hermitian_defect", worst.hermitian_defect)
        .metric("eig_min", worst.eig_min)
        .metric("eig_max", worst.eig_max)
        .metric("reconstruction", worst.reconstruction))
}

/// Index ranges of eigenvalues whose consecutive gaps stay below [`DEGENERACY_GAP`]; singletons
/// are omitted. Expects ascending input.
pub fn degenerate_blocks(eigvals: &[f64]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=eigvals.len() {
        if i == eigvals.len() || eigvals[i] - eigvals[i - 1] >= DEGENERACY_GAP {
            if i - start >= 2 {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

/// Haar-like random unitary: Gram–Schmidt on a complex Gaussian matrix.
pub fn random_unitary(rng: &mut impl Rng, m: usize) -> CMat {
    let mut cols: Vec<Vec<Complex64>> = (0..m)
        .map(|_| (0..m).map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect())
        .collect();
    for j in 0..m {
        for i in 0..j {
            let dot: Complex64 = (0..m).map(|r| cols[i][r].conj() * cols[j][r]).sum();
            for r in 0..m {
                let d = dot * cols[i][r];
                cols[j][r] -= d;
            }
        }
        let norm = cols[j].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        cols[j].iter_mut().for_each(|z| *z /= norm);
    }
    let mut u = CMat::zeros(m);
    for (j, c) in cols.iter().enumerate() {
        for (r, &z) in c.iter().enumerate() {
            u.set(r, j, z);
        }
    }
    u
}

/// `K_c(u, v) = Σ_i φ_ic V_ui conj(V_vi)` by direct summation.
pub fn oracle_kernel(v: &CMat, phi: &[Vec<f64>]) -> Vec<CMat> {
    let n = v.n;
    let channels = phi.first().map_or(0, Vec::len);
    (0..channels)
        .map(|c| {
            let mut k = CMat::zeros(n);
            for a in 0..n {
                for b in 0..n {
                    let s: Complex64 = (0..n).map(|i| v.get(a, i) * v.get(b, i).conj() * phi[i][c]).sum();
                    k.set(a, b, s);
                }
            }
            k
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelInvarianceReport {
    /// Kernel and Mag-bias change under random per-column phases.
    pub phase_delta: f64,
    /// Change under random unitary mixing inside each degenerate block.
    pub unitary_delta: f64,
    /// Change when one eigenvector is scaled by 1.5; must exceed the tolerance.
    pub control_delta: f64,
    /// Primary kernel against direct summation.
    pub oracle_delta: f64,
    pub block_sizes: Vec<usize>,
    pub passed: bool,
}

impl KernelInvarianceReport {
    pub fn control_detected(&self) -> bool {
        self.control_delta > KERNEL_TOL
    }
}

pub fn oracle_kernel_invariance(g: &TextAttributedGraph, q: f64, d_mag: usize, seed: u64) -> Result<KernelInvarianceReport, VerifyError> {
    let cfg = BiasConfig { n_layers: 1, n_heads: 2, mag_q: q, mag_dim: d_mag, ..BiasConfig::default() };
    let feats = compute_features(g, &cfg.feature_config())?;
    let params = init_bias_params::<f64>(&cfg, seed);
    let phi = deepset_phi(&feats.mag_eigvals, &params);
    let mag_only = BiasSources { spd: false, rrwp: false, mag: true };
    let base_kernel = mag_kernel(&feats.mag_eigvecs, &phi);
    let base_bias = assemble_node_bias(&feats, &params, &cfg, mag_only)?;
    let delta = |v: CMat| -> Result<f64, VerifyError> {
        let k = mag_kernel(&v, &phi);
        let kd = k.iter().zip(&base_kernel).fold(0.0f64, |m, (a, b)| m.max(a.max_abs_diff(b)));
        let f = StructuralFeatures { mag_eigvecs: v, ..feats.clone() };
        let bd = assemble_node_bias(&f, &params, &cfg, mag_only)?.max_abs_diff(&base_bias);
        Ok(kd.max(bd))
    };
    let n = feats.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = &feats.mag_eigvecs;

    let mut phased = v.clone();
    for i in 0..n {
        let z = Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
        for r in 0..n {
            phased.set(r, i, v.get(r, i) * z);
        }
    }
    let phase_delta = delta(phased)?;

    let blocks = degenerate_blocks(&feats.mag_eigvals);
    let mut mixed = v.clone();
    for b in &blocks {
        let u = random_unitary(&mut rng, b.len());
        for r in 0..n {
            for (jj, j) in b.clone().enumerate() {
                let s: Complex64 = b.clone().enumerate().map(|(ii, i)| v.get(r, i) * u.get(ii, jj)).sum();
                mixed.set(r, j, s);
            }
        }
    }
    let unitary_delta = delta(mixed)?;

    let mut scaled = v.clone();
    let col = n / 2;
    for r in 0..n {
        scaled.set(r, col, v.get(r, col) * 1.5);
    }
    let control_delta = delta(scaled)?;

    let phi_rows: Vec<Vec<f64>> = (0..n).map(|i| phi.row(i).to_vec()).collect();
    let oracle_delta =
        oracle_kernel(v, &phi_rows).iter().zip(&base_kernel).fold(0.0f64, |m, (a, b)| m.max(a.max_abs_diff(b)));

    let mut report = KernelInvarianceReport {
        phase_delta,
        unitary_delta,
        control_delta,
        oracle_delta,
        block_sizes: blocks.iter().map(Range::len).collect(),
        passed: false,
    };
    report.passed = phase_delta <= KERNEL_TOL && unitary_delta <= KERNEL_TOL && oracle_delta <= KERNEL_TOL && report.control_detected();
    Ok(report)
}

fn fixture(n: usize, edges: &[(usize, usize)]) -> TextAttributedGraph {
    let texts: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    TextAttributedGraph::from_texts(&refs, edges).expect("fixture is valid")
}

/// Directed path `0 → 1 → … → n−1`.
pub fn path_graph(n: usize) -> TextAttributedGraph {
    let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    fixture(n, &edges)
}

/// Complete graph with both directions on every pair; its spectrum has one block of size n−1.
pub fn complete_graph(n: usize) -> TextAttributedGraph {
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|u| (0..n).map(move |v| (u, v))).filter(|(u, v)| u != v).collect();
    fixture(n, &edges)
}

pub fn kernel_battery(seed: u64) -> Result<Vec<Check>, VerifyError> {
    let mut checks = Vec::new();
    for (name, g) in [("kernel-invariance/path5", path_graph(5)), ("kernel-invariance/k4", complete_graph(4))] {
        let r = oracle_kernel_invariance(&g, 0.25, 8, seed)?;
        checks.push(
            Check::new(name, r.passed)
                .metric("phase_max_abs", r.phase_delta)
                .metric("block_unitary_max_abs", r.unitary_delta)
                .metric("degenerate_blocks", r.block_sizes.len() as f64)
                .metric("nonunitary_control_max_abs", r.control_delta)
                .metric("direct_sum_max_abs", r.oracle_delta),
        );
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_graph_features() {
        let g = fixture(4, &[]);
        let spd = oracle_spd(&g, 8);
        for u in 0..4 {
            for v in 0..4 {
                assert_eq!(spd[u][v], if u == v { 0 } else { 8 });
            }
        }
        let r = oracle_rrwp(&g, 3);
        for u in 0..4 {
            for v in 0..4 {
                assert_eq!(r[(u * 4 + v) * 3], f64::from(u8::from(u == v)));
                assert_eq!(r[(u * 4 + v) * 3 + 1], 0.0);
            }
        }
    }

    #[test]
    fn oracles_agree_on_random_graphs() {
        let check = feature_oracle_battery(30, 10, 3).unwrap();
        assert!(check.passed, "{check}");
    }

    #[test]
    fn k4_has_one_triple_block() {
        let f = compute_features(&complete_graph(4), &FeatureConfig::default()).unwrap();
        assert_eq!(degenerate_blocks(&f.mag_eigvals), vec![1..4]);
        assert!((f.mag_eigvals[1] - 4.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn random_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_unitary(&mut rng, 4);
        assert!(u.conj_transpose().matmul(&u).max_abs_diff(&CMat::identity(4)) < 1e-12);
    }

    #[test]
    fn kernel_is_basis_invariant_and_control_fails() {
        for g in [path_graph(5), complete_graph(4)] {
            let r = oracle_kernel_invariance(&g, 0.25, 8, 9).unwrap();
            assert!(r.passed, "{r:?}");
            assert!(r.control_detected());
        }
        let r = oracle_kernel_invariance(&complete_graph(4), 0.25, 8, 9).unwrap();
        assert_eq!(r.block_sizes, vec![3]);
    }
}
