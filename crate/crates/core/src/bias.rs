//! Trainable maps from structural features to additive attention biases.
//!
//! Three sources contribute per layer and head: a lookup table over hop buckets, an MLP over
//! random-walk probability vectors, and an MLP over the real and imaginary parts of a
//! basis-invariant spectral kernel. Node-diagonal entries are exactly zero for every source.

use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::features::{CMat, StructuralFeatures};
use crate::params::{Affine, Mlp, ParamGroup, Visitor};
use crate::tensor::{Mat, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BiasError {
    #[error("hop bucket {bucket} exceeds the table's last column {max_spd}")]
    BucketOutOfRange { bucket: usize, max_spd: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid bias config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_spd: usize,
    pub rrwp_steps: usize,
    pub rrwp_hidden: usize,
    pub mag_q: f64,
    pub mag_dim: usize,
    pub deepset_hidden: usize,
    pub mag_hidden: usize,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            max_spd: 8,
            rrwp_steps: 16,
            rrwp_hidden: 64,
            mag_q: 0.25,
            mag_dim: 32,
            deepset_hidden: 32,
            mag_hidden: 64,
        }
    }
}

impl BiasConfig {
    pub fn validate(&self) -> Result<(), BiasError> {
        let counts = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("rrwp_steps", self.rrwp_steps),
            ("rrwp_hidden", self.rrwp_hidden),
            ("mag_dim", self.mag_dim),
            ("deepset_hidden", self.deepset_hidden),
            ("mag_hidden", self.mag_hidden),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(BiasError::InvalidConfig(format!("{name} must be at least 1")));
        }
        if self.max_spd < 2 {
            return Err(BiasError::InvalidConfig("max_spd must be at least 2".into()));
        }
        if !(self.mag_q.is_finite() && self.mag_q >= 0.0) {
            return Err(BiasError::InvalidConfig("mag_q must be a non-negative number".into()));
        }
        Ok(())
    }

    pub fn feature_config(&self) -> crate::features::FeatureConfig {
        crate::features::FeatureConfig { max_spd: self.max_spd, rrwp_steps: self.rrwp_steps, mag_q: self.mag_q }
    }
}

/// Ablation switches. All off reproduces the plain backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasSources {
    pub spd: bool,
    pub rrwp: bool,
    pub mag: bool,
}

impl Default for BiasSources {
    fn default() -> Self {
        Self::ALL
    }
}

impl BiasSources {
    pub const ALL: Self = Self { spd: true, rrwp: true, mag: true };
    pub const NONE: Self = Self { spd: false, rrwp: false, mag: false };

    pub fn any(&self) -> bool {
        self.spd || self.rrwp || self.mag
    }

    pub fn enabled(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Spd => self.spd,
            ParamGroup::Rrwp => self.rrwp,
            ParamGroup::Mag => self.mag,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasParams<T> {
    /// `(L·H) × (max_spd + 1)`; row `l·H + h`, column = hop bucket. Column 0 stays zero.
    pub spd_table: T,
    pub rrwp: Vec<Mlp<T>>,
    /// Shared eigenvalue lift `1 → deepset_hidden`.
    pub deepset_lift: Affine<T>,
    /// Combiner `2·deepset_hidden → mag_dim`.
    pub deepset_mix: Affine<T>,
    pub mag: Vec<Mlp<T>>,
}

pub type BiasParameters<F> = BiasParams<Mat<F>>;

impl<T> BiasParams<T> {
    pub fn map<'a, U>(&'a self, f: Visitor<'a, '_, T, U>) -> BiasParams<U> {
        BiasParams {
            spd_table: f("bias.spd_table".into(), ParamGroup::Spd, &self.spd_table),
            rrwp: self.rrwp.iter().enumerate().map(|(l, m)| m.map(&format!("bias.rrwp.{l}"), ParamGroup::Rrwp, f)).collect(),
            deepset_lift: self.deepset_lift.map("bias.deepset.lift", ParamGroup::Mag, f),
            deepset_mix: self.deepset_mix.map("bias.deepset.mix", ParamGroup::Mag, f),
            mag: self.mag.iter().enumerate().map(|(l, m)| m.map(&format!("bias.mag.{l}"), ParamGroup::Mag, f)).collect(),
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(ParamGroup, &mut T)) {
        f(ParamGroup::Spd, &mut self.spd_table);
        for m in &mut self.rrwp {
            m.visit_mut(ParamGroup::Rrwp, f);
        }
        self.deepset_lift.visit_mut(ParamGroup::Mag, f);
        self.deepset_mix.visit_mut(ParamGroup::Mag, f);
        for m in &mut self.mag {
            m.visit_mut(ParamGroup::Mag, f);
        }
    }
}

impl<F: Real> BiasParameters<F> {
    /// Re-zeroes the diagonal bucket.
    pub fn pin(&mut self) {
        for r in 0..self.spd_table.rows {
            self.spd_table.set(r, 0, F::zero());
        }
    }

    pub fn cast<G: Real>(&self) -> BiasParameters<G> {
        self.map(&mut |_, _, m| m.cast())
    }

    /// Binds every leaf as a frozen tape parameter, numbered from 0.
    pub fn bind_frozen(&self, tape: &mut Tape<F>) -> BiasParams<Var> {
        let mut index = 0;
        self.map(&mut |_, _, m| {
            index += 1;
            tape.param(index - 1, m.clone(), false)
        })
    }
}

pub fn init_bias_params<F: Real>(cfg: &BiasConfig, seed: u64) -> BiasParameters<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l, h) = (cfg.n_layers, cfg.n_heads);
    BiasParams {
        spd_table: Mat::zeros(l * h, cfg.max_spd + 1),
        rrwp: (0..l).map(|_| Mlp::init_silent(&mut rng, cfg.rrwp_steps, cfg.rrwp_hidden, h)).collect(),
        deepset_lift: Affine::init(&mut rng, 1, cfg.deepset_hidden),
        deepset_mix: Affine::init(&mut rng, 2 * cfg.deepset_hidden, cfg.mag_dim),
        mag: (0..l).map(|_| Mlp::init_silent(&mut rng, 2 * cfg.mag_dim, cfg.mag_hidden, h)).collect(),
    }
}

/// `L × H × N × N` node-pair biases.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeBiasTensor<F> {
    pub n_layers: usize,
    pub n_heads: usize,
    pub n: usize,
    pub values: Vec<F>,
}

impl<F: Real> NodeBiasTensor<F> {
    pub fn zeros(n_layers: usize, n_heads: usize, n: usize) -> Self {
        Self { n_layers, n_heads, n, values: vec![F::zero(); n_layers * n_heads * n * n] }
    }

    #[inline]
    pub fn get(&self, l: usize, h: usize, u: usize, v: usize) -> F {
        self.values[((l * self.n_heads + h) * self.n + u) * self.n + v]
    }

    /// Builds from per-layer `N² × H` matrices (row `u·N + v`, column `h`).
    fn from_layers(n_heads: usize, n: usize, layers: &[Mat<F>]) -> Self {
        let mut t = Self::zeros(layers.len(), n_heads, n);
        for (l, m) in layers.iter().enumerate() {
            for p in 0..n * n {
                for h in 0..n_heads {
                    t.values[(l * n_heads + h) * n * n + p] = m.get(p, h);
                }
            }
        }
        t
    }

    pub fn max_abs_diff(&self, other: &Self) -> F {
        self.values.iter().zip(&other.values).fold(F::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

/// Feature-derived constants the bias sources consume, in model precision.
#[derive(Debug, Clone)]
pub struct FeatureInputs<F> {
    pub n: usize,
    /// Hop bucket per ordered pair `u·N + v`.
    pub spd: Vec<usize>,
    /// `N² × K` walk probabilities.
    pub rrwp: Mat<F>,
    /// `N × 1` Laplacian eigenvalues.
    pub eigvals: Mat<F>,
    /// `N² × N`: `Re(V_ui · conj V_vi)`, so that `Re K = basis_re · φ`.
    pub basis_re: Mat<F>,
    pub basis_im: Mat<F>,
}

impl<F: Real> FeatureInputs<F> {
    pub fn new(feat: &StructuralFeatures, cfg: &BiasConfig) -> Result<Self, BiasError> {
        let n = feat.n;
        if feat.max_spd != cfg.max_spd || feat.rrwp_steps != cfg.rrwp_steps {
            return Err(BiasError::ShapeMismatch(format!(
                "features use max_spd={} K={}, config expects max_spd={} K={}",
                feat.max_spd, feat.rrwp_steps, cfg.max_spd, cfg.rrwp_steps
            )));
        }
        if feat.spd.len() != n || feat.mag_eigvals.len() != n || feat.mag_eigvecs.n != n || feat.rrwp.len() != n * n * feat.rrwp_steps {
            return Err(BiasError::ShapeMismatch(format!("features disagree on node count {n}")));
        }
        let spd: Vec<usize> = feat.spd.iter().flatten().copied().collect();
        if let Some(&bucket) = spd.iter().find(|&&b| b > cfg.max_spd) {
            return Err(BiasError::BucketOutOfRange { bucket, max_spd: cfg.max_spd });
        }
        let k = feat.rrwp_steps;
        let v = &feat.mag_eigvecs;
        let pair = |p: usize, i: usize| v.get(p / n, i) * v.get(p % n, i).conj();
        Ok(Self {
            n,
            spd,
            rrwp: Mat::from_fn(n * n, k, |p, s| F::of(feat.rrwp[p * k + s])),
            eigvals: Mat::from_fn(n, 1, |i, _| F::of(feat.mag_eigvals[i])),
            basis_re: Mat::from_fn(n * n, n, |p, i| F::of(pair(p, i).re)),
            basis_im: Mat::from_fn(n * n, n, |p, i| F::of(pair(p, i).im)),
        })
    }
}

fn offdiag_mask<F: Real>(n: usize, n_heads: usize) -> Arc<Vec<F>> {
    Arc::new((0..n * n * n_heads).map(|i| if (i / n_heads) / n == (i / n_heads) % n { F::zero() } else { F::one() }).collect())
}

fn spd_index(spd: &[usize], layer: usize, cfg: &BiasConfig) -> Arc<Vec<Option<usize>>> {
    let h = cfg.n_heads;
    let cols = cfg.max_spd + 1;
    Arc::new(
        (0..spd.len() * h)
            .map(|i| {
                let bucket = spd[i / h];
                (bucket != 0).then(|| (layer * h + i % h) * cols + bucket)
            })
            .collect(),
    )
}

/// `N × mag_dim` Deep Set output on the tape.
pub fn deepset_phi_var<F: Real>(tape: &mut Tape<F>, p: &BiasParams<Var>, eigvals: &Mat<F>) -> Var {
    let lam = tape.constant(eigvals.clone());
    let z = p.deepset_lift.apply(tape, lam);
    let mean = tape.mean_rows(z);
    let mean = tape.repeat_rows(mean, eigvals.rows);
    let both = tape.concat_cols(&[z, mean]);
    let mixed = p.deepset_mix.apply(tape, both);
    tape.silu(mixed)
}

/// Per-layer `N² × H` bias variables, `None` for a layer when every source is disabled.
pub fn node_bias_vars<F: Real>(
    tape: &mut Tape<F>,
    p: &BiasParams<Var>,
    x: &FeatureInputs<F>,
    cfg: &BiasConfig,
    sources: BiasSources,
) -> Vec<Option<Var>> {
    if !sources.any() {
        return vec![None; cfg.n_layers];
    }
    let mask = offdiag_mask::<F>(x.n, cfg.n_heads);
    let rrwp = sources.rrwp.then(|| tape.constant(x.rrwp.clone()));
    let kernel = sources.mag.then(|| {
        let phi = deepset_phi_var(tape, p, &x.eigvals);
        let br = tape.constant(x.basis_re.clone());
        let bi = tape.constant(x.basis_im.clone());
        let re = tape.matmul(br, phi);
        let im = tape.matmul(bi, phi);
        tape.concat_cols(&[re, im])
    });
    (0..cfg.n_layers)
        .map(|l| {
            let mut terms = Vec::with_capacity(3);
            if sources.spd {
                terms.push(tape.gather(p.spd_table, spd_index(&x.spd, l, cfg), x.n * x.n, cfg.n_heads));
            }
            if let Some(r) = rrwp {
                let y = p.rrwp[l].apply(tape, r);
                terms.push(tape.mask_const(y, mask.clone()));
            }
            if let Some(k) = kernel {
                let y = p.mag[l].apply(tape, k);
                terms.push(tape.mask_const(y, mask.clone()));
            }
            terms.into_iter().reduce(|a, b| tape.add(a, b))
        })
        .collect()
}

/// Per-head token-pair gather indices into an `N² × H` node-bias matrix.
pub fn token_bias_index(node_of_token: &[usize], n: usize, n_heads: usize) -> Vec<Arc<Vec<Option<usize>>>> {
    let t = node_of_token.len();
    (0..n_heads)
        .map(|h| {
            let mut idx = Vec::with_capacity(t * t);
            for &a in node_of_token {
                for &b in node_of_token {
                    idx.push(Some((a * n + b) * n_heads + h));
                }
            }
            Arc::new(idx)
        })
        .collect()
}

fn eval_layers<F: Real>(
    params: &BiasParameters<F>,
    cfg: &BiasConfig,
    n: usize,
    build: impl FnOnce(&mut Tape<F>, &BiasParams<Var>) -> Vec<Option<Var>>,
) -> NodeBiasTensor<F> {
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let vars = build(&mut tape, &bound);
    let zero = Mat::zeros(n * n, cfg.n_heads);
    let layers: Vec<Mat<F>> = vars.iter().map(|v| v.map_or_else(|| zero.clone(), |v| tape.value(v).clone())).collect();
    NodeBiasTensor::from_layers(cfg.n_heads, n, &layers)
}

/// Table gather over hop buckets; the diagonal bucket reads as zero.
pub fn spd_bias<F: Real>(spd: &[Vec<usize>], params: &BiasParameters<F>, cfg: &BiasConfig) -> Result<NodeBiasTensor<F>, BiasError> {
    let n = spd.len();
    let mut out = NodeBiasTensor::zeros(cfg.n_layers, cfg.n_heads, n);
    for (u, row) in spd.iter().enumerate() {
        if row.len() != n {
            return Err(BiasError::ShapeMismatch(format!("spd row {u} has {} entries, expected {n}", row.len())));
        }
        for (v, &bucket) in row.iter().enumerate() {
            if bucket > cfg.max_spd {
                return Err(BiasError::BucketOutOfRange { bucket, max_spd: cfg.max_spd });
            }
            if bucket == 0 {
                continue;
            }
            for l in 0..cfg.n_layers {
                for h in 0..cfg.n_heads {
                    out.values[((l * cfg.n_heads + h) * n + u) * n + v] = params.spd_table.get(l * cfg.n_heads + h, bucket);
                }
            }
        }
    }
    Ok(out)
}

/// Per-layer MLP over each pair's `K` walk probabilities (`rrwp` laid out as `(u·N + v)·K + k`).
pub fn rrwp_bias<F: Real>(rrwp: &[f64], n: usize, params: &BiasParameters<F>, cfg: &BiasConfig) -> NodeBiasTensor<F> {
    let k = cfg.rrwp_steps;
    assert_eq!(rrwp.len(), n * n * k, "rrwp length");
    let x = Mat::from_fn(n * n, k, |p, s| F::of(rrwp[p * k + s]));
    let mask = offdiag_mask::<F>(n, cfg.n_heads);
    eval_layers(params, cfg, n, |tape, p| {
        let c = tape.constant(x);
        (0..cfg.n_layers)
            .map(|l| {
                let y = p.rrwp[l].apply(tape, c);
                Some(tape.mask_const(y, mask.clone()))
            })
            .collect()
    })
}

/// `φ(λ)_i = σ(W₂[lift(λ_i) ⊕ mean_j lift(λ_j)])`, one row per eigenvalue.
pub fn deepset_phi<F: Real>(eigvals: &[f64], params: &BiasParameters<F>) -> Mat<F> {
    let mut tape = Tape::new();
    let p = params.bind_frozen(&mut tape);
    let lam = Mat::from_fn(eigvals.len(), 1, |i, _| F::of(eigvals[i]));
    let phi = deepset_phi_var(&mut tape, &p, &lam);
    tape.value(phi).clone()
}

/// One `N × N` Hermitian matrix `V diag(φ[:, c]) V†` per channel `c`.
pub fn mag_kernel(v: &CMat, phi: &Mat<f64>) -> Vec<CMat> {
    assert_eq!(phi.rows, v.n, "one φ row per eigenvector");
    (0..phi.cols)
        .map(|c| {
            let w: Vec<f64> = (0..phi.rows).map(|i| phi.get(i, c)).collect();
            CMat::from_spectrum(&w, v)
        })
        .collect()
}

/// Per-layer MLP over `[Re K(u,v) ⊕ Im K(u,v)]`.
pub fn mag_bias<F: Real>(kernel: &[CMat], params: &BiasParameters<F>, cfg: &BiasConfig) -> NodeBiasTensor<F> {
    let d = kernel.len();
    assert_eq!(d, cfg.mag_dim, "kernel channels");
    let n = kernel.first().map_or(0, |k| k.n);
    let part = |p: usize, c: usize| -> Complex64 { kernel[c].get(p / n, p % n) };
    let x = Mat::from_fn(n * n, 2 * d, |p, c| F::of(if c < d { part(p, c).re } else { part(p, c - d).im }));
    let mask = offdiag_mask::<F>(n, cfg.n_heads);
    eval_layers(params, cfg, n, |tape, p| {
        let c = tape.constant(x);
        (0..cfg.n_layers)
            .map(|l| {
                let y = p.mag[l].apply(tape, c);
                Some(tape.mask_const(y, mask.clone()))
            })
            .collect()
    })
}

/// Sum of the enabled sources, computed by the same tape path the model uses.
pub fn assemble_node_bias<F: Real>(
    feat: &StructuralFeatures,
    params: &BiasParameters<F>,
    cfg: &BiasConfig,
    sources: BiasSources,
) -> Result<NodeBiasTensor<F>, BiasError> {
    let x = FeatureInputs::new(feat, cfg)?;
    Ok(eval_layers(params, cfg, x.n, |tape, p| node_bias_vars(tape, p, &x, cfg, sources)))
}

/// `L × H × T × T` token biases: `bias(i, j) = node_bias(node(i), node(j))`.
pub fn broadcast_to_tokens<F: Real>(nb: &NodeBiasTensor<F>, node_of_token: &[usize]) -> Vec<F> {
    let t = node_of_token.len();
    let mut out = Vec::with_capacity(nb.n_layers * nb.n_heads * t * t);
    for l in 0..nb.n_layers {
        for h in 0..nb.n_heads {
            for &a in node_of_token {
                for &b in node_of_token {
                    out.push(nb.get(l, h, a, b));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub spd: usize,
    pub rrwp: usize,
    pub mag: usize,
    pub total: usize,
}

/// Trainable entries per source. The pinned diagonal bucket is excluded from `spd`.
pub fn count_parameters(cfg: &BiasConfig) -> ParamCount {
    let (l, h) = (cfg.n_layers, cfg.n_heads);
    let spd = l * h * cfg.max_spd;
    let rrwp = l * Mlp::<Mat<f64>>::count(cfg.rrwp_steps, cfg.rrwp_hidden, h);
    let ds = cfg.deepset_hidden;
    let deepset = (ds + ds) + (2 * ds * cfg.mag_dim + cfg.mag_dim);
    let mag = deepset + l * Mlp::<Mat<f64>>::count(2 * cfg.mag_dim, cfg.mag_hidden, h);
    ParamCount { spd, rrwp, mag, total: spd + rrwp + mag }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{compute_features, hermitian_eigendecomposition, magnetic_laplacian, FeatureConfig};
    use crate::graph::TextAttributedGraph;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_cfg() -> BiasConfig {
        BiasConfig {
            n_layers: 2,
            n_heads: 3,
            max_spd: 4,
            rrwp_steps: 5,
            rrwp_hidden: 6,
            mag_q: 0.25,
            mag_dim: 4,
            deepset_hidden: 3,
            mag_hidden: 5,
        }
    }

    fn graph(n: usize, edges: &[(usize, usize)]) -> TextAttributedGraph {
        let texts: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        TextAttributedGraph::from_texts(&refs, edges).unwrap()
    }

    fn randomized(cfg: &BiasConfig, seed: u64) -> BiasParameters<f64> {
        let mut p = init_bias_params::<f64>(cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        p.visit_mut(&mut |_, m| m.data.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0)));
        p.pin();
        p
    }

    fn features(g: &TextAttributedGraph, cfg: &BiasConfig) -> StructuralFeatures {
        compute_features(g, &FeatureConfig { max_spd: cfg.max_spd, rrwp_steps: cfg.rrwp_steps, mag_q: cfg.mag_q }).unwrap()
    }

    fn silu(x: f64) -> f64 {
        x / (1.0 + (-x).exp())
    }

    #[test]
    fn init_is_deterministic_and_pinned() {
        let cfg = BiasConfig::default();
        let a = init_bias_params::<f64>(&cfg, 3);
        assert_eq!(a, init_bias_params::<f64>(&cfg, 3));
        assert_ne!(a, init_bias_params::<f64>(&cfg, 4));
        assert!((0..a.spd_table.rows).all(|r| a.spd_table.get(r, 0) == 0.0));
    }

    #[test]
    fn published_counts() {
        let big = BiasConfig { n_layers: 16, n_heads: 32, max_spd: 8, rrwp_steps: 16, rrwp_hidden: 64, ..BiasConfig::default() };
        let c = count_parameters(&big);
        assert_eq!(c.spd, 4096);
        assert_eq!(c.rrwp, 50_688);
        let tiny = BiasConfig { n_layers: 1, n_heads: 1, max_spd: 2, ..BiasConfig::default() };
        assert_eq!(count_parameters(&tiny).spd, 2);
    }

    #[test]
    fn count_matches_allocated_leaves() {
        for cfg in [small_cfg(), BiasConfig::default()] {
            let p = init_bias_params::<f64>(&cfg, 0);
            let mut sizes = std::collections::HashMap::<ParamGroup, usize>::new();
            p.map(&mut |_, g, m| *sizes.entry(g).or_default() += m.len());
            let c = count_parameters(&cfg);
            assert_eq!(sizes[&ParamGroup::Spd] - cfg.n_layers * cfg.n_heads, c.spd);
            assert_eq!(sizes[&ParamGroup::Rrwp], c.rrwp);
            assert_eq!(sizes[&ParamGroup::Mag], c.mag);
            assert_eq!(c.spd + c.rrwp + c.mag, c.total);
        }
    }

    #[test]
    fn map_and_visit_mut_agree_on_order() {
        let cfg = small_cfg();
        let mut p = init_bias_params::<f64>(&cfg, 1);
        let mut from_map = Vec::new();
        p.map(&mut |_, g, m| from_map.push((g, m.shape())));
        let mut from_visit = Vec::new();
        p.visit_mut(&mut |g, m| from_visit.push((g, m.shape())));
        assert_eq!(from_map, from_visit);
    }

    #[test]
    fn spd_gather_and_sentinel() {
        let cfg = small_cfg();
        let mut p = init_bias_params::<f64>(&cfg, 0);
        p.spd_table.set(cfg.n_heads + 2, 2, 0.7);
        p.spd_table.set(1, cfg.max_spd, -3.0);
        let g = graph(4, &[(0, 1), (1, 2)]);
        let spd = crate::features::shortest_path_distances(&g, cfg.max_spd);
        let b = spd_bias(&spd, &p, &cfg).unwrap();
        assert_eq!(b.get(1, 2, 0, 2), 0.7);
        assert_eq!(b.get(1, 2, 2, 0), 0.7);
        assert_eq!(b.get(0, 1, 0, 3), -3.0);
        assert_eq!(b.get(0, 1, 3, 3), 0.0);
        let single = spd_bias(&[vec![0]], &p, &cfg).unwrap();
        assert!(single.values.iter().all(|&x| x == 0.0));
        assert_eq!(
            spd_bias(&[vec![0, 9], vec![9, 0]], &p, &cfg),
            Err(BiasError::BucketOutOfRange { bucket: 9, max_spd: cfg.max_spd })
        );
    }

    #[test]
    fn rrwp_constant_function_and_zero_diagonal() {
        let cfg = small_cfg();
        let mut p = init_bias_params::<f64>(&cfg, 0);
        for m in &mut p.rrwp {
            m.hidden.w.data.fill(0.0);
            m.out.w.data.fill(0.0);
            m.out.b = Mat::from_vec(1, cfg.n_heads, vec![0.5, -1.0, 2.0]);
        }
        let g = graph(3, &[(0, 1), (2, 1)]);
        let rr = crate::features::rrwp(&g, cfg.rrwp_steps);
        let b = rrwp_bias(&rr, 3, &p, &cfg);
        for l in 0..2 {
            for h in 0..3 {
                for u in 0..3 {
                    for v in 0..3 {
                        let want = if u == v { 0.0 } else { [0.5, -1.0, 2.0][h] };
                        assert_eq!(b.get(l, h, u, v), want);
                    }
                }
            }
        }
    }

    #[test]
    fn rrwp_two_node_scalar_oracle() {
        let cfg = BiasConfig { n_layers: 1, n_heads: 1, rrwp_steps: 2, rrwp_hidden: 1, ..small_cfg() };
        let mut p = init_bias_params::<f64>(&cfg, 0);
        p.rrwp[0].hidden.w = Mat::from_vec(2, 1, vec![0.3, -1.2]);
        p.rrwp[0].hidden.b = Mat::from_vec(1, 1, vec![0.1]);
        p.rrwp[0].out.w = Mat::from_vec(1, 1, vec![2.0]);
        p.rrwp[0].out.b = Mat::from_vec(1, 1, vec![-0.4]);
        let g = graph(2, &[(0, 1)]);
        let rr = crate::features::rrwp(&g, 2);
        let b = rrwp_bias(&rr, 2, &p, &cfg);
        // P(0,1) = [0, 1], P(1,0) = [0, 0]
        let want01 = 2.0 * silu(0.3 * 0.0 - 1.2 * 1.0 + 0.1) - 0.4;
        let want10 = 2.0 * silu(0.1) - 0.4;
        assert!((b.get(0, 0, 0, 1) - want01).abs() < 1e-15);
        assert!((b.get(0, 0, 1, 0) - want10).abs() < 1e-15);
    }

    #[test]
    fn deepset_constant_spectrum_rows_identical() {
        let cfg = small_cfg();
        let p = randomized(&cfg, 2);
        let phi = deepset_phi(&[0.7; 5], &p);
        for r in 1..5 {
            assert_eq!(phi.row(r), phi.row(0));
        }
    }

    #[test]
    fn deepset_two_node_scalar_oracle() {
        let cfg = BiasConfig { deepset_hidden: 1, mag_dim: 1, ..small_cfg() };
        let mut p = init_bias_params::<f64>(&cfg, 0);
        p.deepset_lift = Affine { w: Mat::from_vec(1, 1, vec![1.5]), b: Mat::from_vec(1, 1, vec![-0.2]) };
        p.deepset_mix = Affine { w: Mat::from_vec(2, 1, vec![0.8, -0.6]), b: Mat::from_vec(1, 1, vec![0.05]) };
        let lam = [0.0, 2.0];
        let lift: Vec<f64> = lam.iter().map(|&x| 1.5 * x - 0.2).collect();
        let mean = (lift[0] + lift[1]) / 2.0;
        let phi = deepset_phi(&lam, &p);
        for i in 0..2 {
            let want = silu(0.8 * lift[i] - 0.6 * mean + 0.05);
            assert!((phi.get(i, 0) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn kernel_of_unit_phi_is_identity() {
        let g = graph(4, &[(0, 1), (1, 2), (3, 2)]);
        let l = magnetic_laplacian(&g, 0.25);
        let (_, v) = hermitian_eigendecomposition(&l).unwrap();
        let k = mag_kernel(&v, &Mat::from_fn(4, 3, |_, _| 1.0));
        for ch in &k {
            assert!(ch.max_abs_diff(&CMat::identity(4)) < 1e-12);
            assert!(ch.hermitian_defect() < 1e-12);
        }
    }

    #[test]
    fn kernel_ignores_eigenvector_phases() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]);
        let (_, v) = hermitian_eigendecomposition(&magnetic_laplacian(&g, 0.25)).unwrap();
        let phi = Mat::from_fn(5, 2, |i, c| (i * 3 + c) as f64 * 0.37 - 1.0);
        let k = mag_kernel(&v, &phi);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut w = v.clone();
        for c in 0..5 {
            let z = Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
            for r in 0..5 {
                w.set(r, c, w.get(r, c) * z);
            }
        }
        for (a, b) in k.iter().zip(mag_kernel(&w, &phi)) {
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }

    #[test]
    fn mag_two_node_scalar_oracle() {
        let cfg = BiasConfig { n_layers: 1, n_heads: 1, mag_dim: 1, mag_hidden: 1, ..small_cfg() };
        let mut p = init_bias_params::<f64>(&cfg, 0);
        p.mag[0].hidden.w = Mat::from_vec(2, 1, vec![0.9, 1.7]);
        p.mag[0].hidden.b = Mat::from_vec(1, 1, vec![0.2]);
        p.mag[0].out.w = Mat::from_vec(1, 1, vec![-1.1]);
        p.mag[0].out.b = Mat::from_vec(1, 1, vec![0.3]);
        let mut k = CMat::zeros(2);
        k.set(0, 1, Complex64::new(0.25, -0.5));
        k.set(1, 0, Complex64::new(0.25, 0.5));
        let b = mag_bias(&[k], &p, &cfg);
        let want = |re: f64, im: f64| -1.1 * silu(0.9 * re + 1.7 * im + 0.2) + 0.3;
        assert!((b.get(0, 0, 0, 1) - want(0.25, -0.5)).abs() < 1e-15);
        assert!((b.get(0, 0, 1, 0) - want(0.25, 0.5)).abs() < 1e-15);
        assert_eq!(b.get(0, 0, 0, 0), 0.0);
    }

    #[test]
    fn assembled_equals_independent_sum() {
        let cfg = small_cfg();
        let p = randomized(&cfg, 7);
        let g = graph(5, &[(0, 1), (1, 2), (3, 1), (2, 0)]);
        let f = features(&g, &cfg);
        let total = assemble_node_bias(&f, &p, &cfg, BiasSources::ALL).unwrap();
        let s = spd_bias(&f.spd, &p, &cfg).unwrap();
        let r = rrwp_bias(&f.rrwp, 5, &p, &cfg);
        let phi = deepset_phi(&f.mag_eigvals, &p);
        let m = mag_bias(&mag_kernel(&f.mag_eigvecs, &phi), &p, &cfg);
        for i in 0..total.values.len() {
            let want = s.values[i] + r.values[i] + m.values[i];
            assert!((total.values[i] - want).abs() < 1e-12, "entry {i}");
        }
        let none = assemble_node_bias(&f, &p, &cfg, BiasSources::NONE).unwrap();
        assert!(none.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_node_bias_is_zero() {
        let cfg = small_cfg();
        let p = randomized(&cfg, 1);
        let f = features(&graph(1, &[]), &cfg);
        let b = assemble_node_bias(&f, &p, &cfg, BiasSources::ALL).unwrap();
        assert_eq!(b.values.len(), cfg.n_layers * cfg.n_heads);
        assert!(b.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mismatched_features_rejected() {
        let cfg = small_cfg();
        let f = compute_features(&graph(2, &[]), &FeatureConfig::default()).unwrap();
        assert!(matches!(FeatureInputs::<f64>::new(&f, &cfg), Err(BiasError::ShapeMismatch(_))));
    }

    #[test]
    fn broadcast_blocks() {
        let mut nb = NodeBiasTensor::<f64>::zeros(1, 1, 2);
        nb.values = vec![0.0, 1.5, -2.0, 0.0];
        let tb = broadcast_to_tokens(&nb, &[0, 0, 1, 1, 1]);
        for i in 0..5 {
            for j in 0..5 {
                let (a, b) = (usize::from(i >= 2), usize::from(j >= 2));
                assert_eq!(tb[i * 5 + j], nb.get(0, 0, a, b));
            }
        }
        let single = broadcast_to_tokens(&nb, &[0, 1]);
        assert_eq!(single, nb.values);
    }

    fn arb_digraph() -> impl Strategy<Value = TextAttributedGraph> {
        (1usize..7).prop_flat_map(|n| {
            proptest::collection::btree_set((0..n, 0..n), 0..(n * n))
                .prop_map(move |set| graph(n, &set.into_iter().filter(|(a, b)| a != b).collect::<Vec<_>>()))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn diagonal_exactly_zero(g in arb_digraph(), seed in 0u64..1000) {
            let cfg = small_cfg();
            let p = randomized(&cfg, seed);
            let b = assemble_node_bias(&features(&g, &cfg), &p, &cfg, BiasSources::ALL).unwrap();
            for l in 0..cfg.n_layers {
                for h in 0..cfg.n_heads {
                    for u in 0..g.n_nodes() {
                        prop_assert_eq!(b.get(l, h, u, u), 0.0);
                    }
                }
            }
        }

        #[test]
        fn broadcast_constant_on_blocks(sizes in proptest::collection::vec(1usize..4, 1..5)) {
            let n = sizes.len();
            let mut nb = NodeBiasTensor::<f64>::zeros(1, 2, n);
            for (i, x) in nb.values.iter_mut().enumerate() {
                *x = i as f64;
            }
            let nodes: Vec<usize> = sizes.iter().enumerate().flat_map(|(u, &s)| std::iter::repeat_n(u, s)).collect();
            let t = nodes.len();
            let tb = broadcast_to_tokens(&nb, &nodes);
            for h in 0..2 {
                for i in 0..t {
                    for j in 0..t {
                        prop_assert_eq!(tb[(h * t + i) * t + j], nb.get(0, h, nodes[i], nodes[j]));
                    }
                }
            }
        }
    }
}
