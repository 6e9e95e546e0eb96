//! Numerical property checks, independent oracles and the attention probe.
//!
//! Every check is deterministic given its seed and reports the measured magnitudes next to a
//! pass flag, so a run can be diffed against an earlier one.

mod labels;
mod oracles;
mod probe;
mod training;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bias::{count_parameters, BiasError};
use crate::data::DataError;
use crate::features::FeatureError;
use crate::graph::{append_question, TextAttributedGraph};
use crate::layout::{build_layout, identity_permutation};
use crate::model::{all_trainable, GtlmModel, ModelConfig, ModelError, Precision, Prepared};
use crate::params::ParamGroup;
use crate::tensor::Real;

pub use labels::{agreement_battery, check_generator_agreement, oracle_label, AgreementReport};
pub use oracles::{
    check_feature_oracles, complete_graph, degenerate_blocks, feature_oracle_battery, kernel_battery, oracle_kernel,
    oracle_kernel_invariance, oracle_magnetic_laplacian, oracle_rrwp, oracle_spd, path_graph, random_graph, random_unitary,
    FeatureOracleReport, KernelInvarianceReport, DEGENERACY_GAP, KERNEL_TOL,
};
pub use training::{train_probe, ProbeOutcome, ProbeSetup};
pub use probe::{
    aggregate_attention, mean_separation, prefix_components, probe_message_passing, separation, NodeAttention, ProbeReport,
};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Bias(#[from] BiasError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

/// 1e-12 in 64-bit mode, 1e-4 in 32-bit mode.
pub fn property_tolerance<F: Real>() -> f64 {
    if std::mem::size_of::<F>() >= 8 {
        1e-12
    } else {
        1e-4
    }
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub metrics: Vec<(String, f64)>,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool) -> Self {
        Self { name: name.into(), passed, metrics: Vec::new() }
    }

    pub fn metric(mut self, key: &str, value: f64) -> Self {
        self.metrics.push((key.to_string(), value));
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", if self.passed { "PASS" } else { "FAIL" }, self.name)?;
        for (k, v) in &self.metrics {
            write!(f, " {k}={v:e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub precision: Precision,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("precision {}\n", self.precision);
        for c in &self.checks {
            s.push_str(&c.to_string());
            s.push('\n');
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        s.push_str(&format!("summary {} checks, {failed} failed\n", self.checks.len()));
        s
    }
}

/// Overwrites every bias leaf with uniform noise in `±scale` and re-pins the diagonal bucket.
pub fn randomize_bias<F: Real>(model: &mut GtlmModel<F>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.params.bias.visit_mut(&mut |_, m| m.data.iter_mut().for_each(|x| *x = F::of(rng.random_range(-scale..scale))));
    model.params.bias.pin();
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaReport {
    pub deltas: Vec<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

impl DeltaReport {
    fn new(deltas: Vec<f64>, tolerance: f64) -> Self {
        let passed = deltas.iter().all(|&d| d <= tolerance);
        Self { deltas, tolerance, passed }
    }

    pub fn max(&self) -> f64 {
        self.deltas.iter().copied().fold(0.0, f64::max)
    }

    fn check(&self, name: &str) -> Check {
        Check::new(name, self.passed)
            .metric("trials", self.deltas.len() as f64)
            .metric("max_abs", self.max())
            .metric("tolerance", self.tolerance)
    }
}

fn random_text(rng: &mut impl Rng) -> String {
    let len = rng.random_range(1..=24);
    (0..len).map(|_| char::from(rng.random_range(b' '..=b'~'))).collect()
}

/// Single-node graphs of random text through `model` and its bias-stripped twin.
pub fn check_backward_compat<F: Real>(model: &GtlmModel<F>, trials: usize, seed: u64) -> Result<DeltaReport, VerifyError> {
    if trials == 0 {
        return Err(VerifyError::Precondition("at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let twin = model.stripped();
    let mut deltas = Vec::with_capacity(trials);
    for _ in 0..trials {
        let text = random_text(&mut rng);
        let g = TextAttributedGraph::from_texts(&[&text], &[]).map_err(|e| VerifyError::Precondition(format!("{e:?}")))?;
        let a = model.forward(&g, &[], false)?.logits;
        let b = twin.forward(&g, &[], false)?.logits;
        deltas.push(a.max_abs_diff(&b).as_f64());
    }
    Ok(DeltaReport::new(deltas, property_tolerance::<F>()))
}

/// Multi-node graph with every bias leaf zeroed, against the stripped twin.
pub fn check_zero_bias_ablation<F: Real>(model: &GtlmModel<F>, g: &TextAttributedGraph) -> Result<DeltaReport, VerifyError> {
    let mut zeroed = model.clone();
    zeroed.params.bias.visit_mut(&mut |_, m| m.data.iter_mut().for_each(|x| *x = F::zero()));
    let perm = identity_permutation(g);
    let a = zeroed.forward(g, &perm, false)?.logits;
    let b = model.stripped().forward(g, &perm, false)?.logits;
    Ok(DeltaReport::new(vec![a.max_abs_diff(&b).as_f64()], property_tolerance::<F>()))
}

/// Forward passes under random prefix orders; each output row is matched back to the canonical
/// run by (node, position inside the node).
pub fn check_equivariance<F: Real>(
    model: &GtlmModel<F>,
    g: &TextAttributedGraph,
    n_permutations: usize,
    seed: u64,
) -> Result<DeltaReport, VerifyError> {
    if g.n_nodes() < 3 {
        return Err(VerifyError::Precondition("equivariance needs at least two prefix nodes".into()));
    }
    let canonical = identity_permutation(g);
    let base_layout = build_layout(g, &canonical).map_err(ModelError::from)?;
    let base = model.forward(g, &canonical, false)?.logits;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut deltas = Vec::with_capacity(n_permutations);
    for _ in 0..n_permutations {
        let mut perm = canonical.clone();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let layout = build_layout(g, &perm).map_err(ModelError::from)?;
        let out = model.forward(g, &perm, false)?.logits;
        let mut row_of = std::collections::HashMap::new();
        for j in 0..layout.len() {
            row_of.insert((layout.node_index[j], layout.position[j]), j);
        }
        let mut worst = 0.0f64;
        for i in 0..base_layout.len() {
            let j = row_of[&(base_layout.node_index[i], base_layout.position[i])];
            for c in 0..base.cols {
                worst = worst.max((base.get(i, c) - out.get(j, c)).abs().as_f64());
            }
        }
        deltas.push(worst);
    }
    Ok(DeltaReport::new(deltas, property_tolerance::<F>()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCoord {
    pub leaf: String,
    pub group: ParamGroup,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub coords: Vec<GradientCoord>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradientReport {
    pub fn max_rel_err(&self) -> f64 {
        self.coords.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    pub fn groups_covered(&self) -> usize {
        let mut gs: Vec<ParamGroup> = self.coords.iter().map(|c| c.group).collect();
        gs.sort_by_key(|g| *g as usize);
        gs.dedup();
        gs.len()
    }
}

/// Denominator floor of the relative error, so coordinates with a vanishing gradient are judged
/// on absolute error.
pub const GRAD_ERR_FLOOR: f64 = 1e-4;

/// Central differences on `n_coords` coordinates: a group is drawn uniformly, then a leaf of
/// that group, then an entry. The loss is the batch mean.
pub fn check_gradients(
    model: &GtlmModel<f64>,
    batch: &[TextAttributedGraph],
    n_coords: usize,
    eps: f64,
    tol: f64,
    seed: u64,
) -> Result<GradientReport, VerifyError> {
    let prepared: Vec<Prepared<f64>> =
        batch.iter().map(|g| model.prepare(g, &identity_permutation(g))).collect::<Result<_, _>>()?;
    if prepared.is_empty() {
        return Err(VerifyError::Precondition("empty batch".into()));
    }
    let (_, grads) = model.batch_gradient(&prepared, &all_trainable)?;
    let names = model.params.names();
    let mut sizes = Vec::new();
    model.params.map(&mut |_, _, m| sizes.push(m.len()));
    let groups: Vec<ParamGroup> = ParamGroup::ALL.into_iter().filter(|g| names.iter().any(|(_, x)| x == g)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<(usize, usize)> = (0..n_coords)
        .map(|_| {
            let g = groups[rng.random_range(0..groups.len())];
            let leaves: Vec<usize> = (0..names.len()).filter(|&i| names[i].1 == g).collect();
            let leaf = leaves[rng.random_range(0..leaves.len())];
            (leaf, rng.random_range(0..sizes[leaf]))
        })
        .collect();
    let mean_loss = |m: &GtlmModel<f64>| -> Result<f64, ModelError> {
        let mut s = 0.0;
        for p in &prepared {
            s += m.loss_prepared(p)?;
        }
        Ok(s / prepared.len() as f64)
    };
    let coords: Vec<GradientCoord> = picks
        .par_iter()
        .map(|&(leaf, index)| {
            let shifted = |delta: f64| {
                let mut m = model.clone();
                let mut k = 0;
                m.params.visit_mut(&mut |_, w| {
                    if k == leaf {
                        w.data[index] += delta;
                    }
                    k += 1;
                });
                mean_loss(&m)
            };
            let numeric = (shifted(eps)? - shifted(-eps)?) / (2.0 * eps);
            let analytic = grads[leaf].as_ref().map_or(0.0, |g| g.data[index]);
            let rel_err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_ERR_FLOOR);
            Ok(GradientCoord { leaf: names[leaf].0.clone(), group: names[leaf].1, index, analytic, numeric, rel_err })
        })
        .collect::<Result<_, ModelError>>()?;
    let passed = coords.iter().all(|c| c.rel_err <= tol);
    Ok(GradientReport { coords, tolerance: tol, passed })
}

/// Small 2-layer, 4-head configuration used by the battery.
pub fn desk_config() -> ModelConfig {
    let mut cfg = ModelConfig { d_model: 32, d_head: 8, d_ffn: 64, ..ModelConfig::default() };
    cfg.bias.rrwp_hidden = 16;
    cfg.bias.mag_dim = 8;
    cfg.bias.deepset_hidden = 8;
    cfg.bias.mag_hidden = 16;
    cfg
}

/// Six-node fixture: five prefix nodes with a directed cycle, a chord and a pendant, plus a
/// labelled target.
pub fn equivariance_fixture() -> TextAttributedGraph {
    let g = TextAttributedGraph::from_texts(
        &["Query", "alpha", "be", "gam", "d", "epsilon"],
        &[(0, 1), (1, 2), (2, 3), (3, 1), (3, 4), (5, 4), (0, 5)],
    )
    .expect("fixture is valid");
    append_question(&g, "Which node is last?", "epsilon").expect("fixture template")
}

fn gradient_batch() -> Vec<TextAttributedGraph> {
    let a = equivariance_fixture();
    let b = TextAttributedGraph::from_texts(&["Q", "x", "yz"], &[(1, 2), (0, 1)]).expect("valid");
    vec![a, append_question(&b, "Edge?", "Yes").expect("template")]
}

/// Full battery. Property checks run in the requested precision; feature oracles, kernel
/// invariance and gradient checks always run in 64-bit.
pub fn run_battery(precision: Precision, seed: u64) -> Result<VerifyReport, VerifyError> {
    let mut model = GtlmModel::<f64>::new(desk_config(), seed)?;
    randomize_bias(&mut model, seed ^ 0x5eed, 1.0);
    let fixture = equivariance_fixture();
    let mut checks = Vec::new();
    match precision {
        Precision::F64 => {
            checks.push(check_backward_compat(&model, 5, seed)?.check("backward-compat"));
            checks.push(check_zero_bias_ablation(&model, &fixture)?.check("zero-bias-ablation"));
            checks.push(check_equivariance(&model, &fixture, 5, seed)?.check("permutation-equivariance"));
        }
        Precision::F32 => {
            let m32 = model.cast::<f32>();
            checks.push(check_backward_compat(&m32, 5, seed)?.check("backward-compat"));
            checks.push(check_zero_bias_ablation(&m32, &fixture)?.check("zero-bias-ablation"));
            checks.push(check_equivariance(&m32, &fixture, 5, seed)?.check("permutation-equivariance"));
        }
    }
    checks.push(feature_oracle_battery(50, 12, seed)?);
    checks.extend(kernel_battery(seed)?);
    let g = check_gradients(&model, &gradient_batch(), 200, 1e-6, 1e-4, seed)?;
    checks.push(
        Check::new("gradients", g.passed)
            .metric("coords", g.coords.len() as f64)
            .metric("groups", g.groups_covered() as f64)
            .metric("max_rel_err", g.max_rel_err())
            .metric("tolerance", g.tolerance),
    );
    let big = crate::bias::BiasConfig { n_layers: 16, n_heads: 32, max_spd: 8, rrwp_steps: 16, rrwp_hidden: 64, ..Default::default() };
    let pc = count_parameters(&big);
    let shipped = count_parameters(&ModelConfig::default().bias);
    checks.push(
        Check::new(
            "parameter-count",
            pc.spd == 4096 && pc.rrwp == 50_688 && shipped.total == shipped.spd + shipped.rrwp + shipped.mag,
        )
        .metric("spd_l16_h32", pc.spd as f64)
        .metric("rrwp_l16_h32", pc.rrwp as f64)
        .metric("default_total", shipped.total as f64),
    );
    Ok(VerifyReport { precision, checks })
}
