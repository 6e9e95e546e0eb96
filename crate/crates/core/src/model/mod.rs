//! Decoder transformer with per-node rotary positions, a prefix/causal mask and additive
//! structural attention biases.
//!
//! Blocks are pre-norm: `x += Attn(RMSNorm(x))`, `x += SwiGLU(RMSNorm(x))`, followed by a final
//! RMSNorm and an untied output head.

mod checkpoint;
mod decode;
mod train;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{RopeTable, Tape, Var};
use crate::bias::{init_bias_params, node_bias_vars, token_bias_index, BiasConfig, BiasError, BiasParams, BiasSources, FeatureInputs};
use crate::features::{compute_features, FeatureError};
use crate::graph::{GraphError, TextAttributedGraph};
use crate::layout::{build_layout, build_mask, LayoutError, TokenLayout};
use crate::params::{uniform, ParamGroup, Visitor};
use crate::tensor::{Mat, Real};
use crate::tokenizer::MIN_VOCAB;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use decode::{AnswerTrie, DecodeMode};
pub use train::{AdamState, Precision, TrainConfig};

const RMS_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Bias(#[from] BiasError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("no supervised answer tokens in this example")]
    EmptyAnswerSpan,
    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub rope_base: f64,
    pub max_seq_len: usize,
    pub bias: BiasConfig,
    pub sources: BiasSources,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_head: 16,
            d_ffn: 128,
            vocab_size: MIN_VOCAB,
            rope_base: 10_000.0,
            max_seq_len: 1024,
            bias: BiasConfig::default(),
            sources: BiasSources::ALL,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_ffn == 0 || self.max_seq_len == 0 {
            return bad("layer, head, ffn and sequence sizes must be at least 1".into());
        }
        if self.d_model != self.n_heads * self.d_head {
            return bad(format!("d_model {} != n_heads {} · d_head {}", self.d_model, self.n_heads, self.d_head));
        }
        if self.d_head == 0 || self.d_head % 2 != 0 {
            return bad(format!("d_head {} must be even and positive", self.d_head));
        }
        if self.vocab_size < MIN_VOCAB {
            return bad(format!("vocab_size {} is below the byte vocabulary {MIN_VOCAB}", self.vocab_size));
        }
        if self.bias.n_layers != self.n_layers || self.bias.n_heads != self.n_heads {
            return bad("bias config must share n_layers and n_heads with the model".into());
        }
        if !(self.rope_base > 1.0) {
            return bad("rope_base must exceed 1".into());
        }
        self.bias.validate()?;
        Ok(())
    }

    /// Same weights layout with every bias source switched off.
    pub fn stripped(&self) -> Self {
        Self { sources: BiasSources::NONE, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams<T> {
    pub attn_norm: T,
    pub wq: T,
    pub wk: T,
    pub wv: T,
    pub wo: T,
    pub ffn_norm: T,
    pub w_gate: T,
    pub w_up: T,
    pub w_down: T,
}

impl<T> LayerParams<T> {
    fn map<'a, U>(&'a self, l: usize, f: Visitor<'a, '_, T, U>) -> LayerParams<U> {
        use ParamGroup::{Attention as A, FeedForward as Ff, Norm as N};
        let name = |s: &str| format!("layers.{l}.{s}");
        LayerParams {
            attn_norm: f(name("attn_norm"), N, &self.attn_norm),
            wq: f(name("wq"), A, &self.wq),
            wk: f(name("wk"), A, &self.wk),
            wv: f(name("wv"), A, &self.wv),
            wo: f(name("wo"), A, &self.wo),
            ffn_norm: f(name("ffn_norm"), N, &self.ffn_norm),
            w_gate: f(name("w_gate"), Ff, &self.w_gate),
            w_up: f(name("w_up"), Ff, &self.w_up),
            w_down: f(name("w_down"), Ff, &self.w_down),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamGroup, &mut T)) {
        use ParamGroup::{Attention as A, FeedForward as Ff, Norm as N};
        f(N, &mut self.attn_norm);
        f(A, &mut self.wq);
        f(A, &mut self.wk);
        f(A, &mut self.wv);
        f(A, &mut self.wo);
        f(N, &mut self.ffn_norm);
        f(Ff, &mut self.w_gate);
        f(Ff, &mut self.w_up);
        f(Ff, &mut self.w_down);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub embed: T,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm: T,
    pub unembed: T,
    pub bias: BiasParams<T>,
}

impl<T> ModelParams<T> {
    /// Visits leaves in declaration order (backbone first, then bias parameters).
    pub fn map<'a, U>(&'a self, f: Visitor<'a, '_, T, U>) -> ModelParams<U> {
        ModelParams {
            embed: f("embed".into(), ParamGroup::Embedding, &self.embed),
            layers: self.layers.iter().enumerate().map(|(l, p)| p.map(l, f)).collect(),
            final_norm: f("final_norm".into(), ParamGroup::Norm, &self.final_norm),
            unembed: f("unembed".into(), ParamGroup::Output, &self.unembed),
            bias: self.bias.map(f),
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(ParamGroup, &mut T)) {
        f(ParamGroup::Embedding, &mut self.embed);
        for l in &mut self.layers {
            l.visit_mut(f);
        }
        f(ParamGroup::Norm, &mut self.final_norm);
        f(ParamGroup::Output, &mut self.unembed);
        self.bias.visit_mut(f);
    }

    /// `(name, group)` of every leaf in declaration order.
    pub fn names(&self) -> Vec<(String, ParamGroup)> {
        let mut out = Vec::new();
        self.map(&mut |name, g, _| out.push((name, g)));
        out
    }
}

/// Which leaves get gradients on a given pass.
pub type Trainable<'a> = &'a (dyn Fn(ParamGroup) -> bool + Sync);

pub fn all_trainable(_: ParamGroup) -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtlmModel<F: Real> {
    pub config: ModelConfig,
    pub params: ModelParams<Mat<F>>,
}

/// Everything about one input that does not depend on the weights.
#[derive(Debug, Clone)]
pub struct Prepared<F: Real> {
    pub layout: TokenLayout,
    mask: Arc<Vec<bool>>,
    rope: Arc<RopeTable<F>>,
    tokens: Arc<Vec<usize>>,
    targets: Arc<Vec<(usize, usize)>>,
    features: Option<Arc<FeatureInputs<F>>>,
    token_index: Vec<Arc<Vec<Option<usize>>>>,
}

impl<F: Real> Prepared<F> {
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

/// Logits plus optional per-layer, per-head `T × T` attention maps.
#[derive(Debug, Clone)]
pub struct ForwardOutput<F> {
    pub logits: Mat<F>,
    pub attention: Option<Vec<Vec<Mat<F>>>>,
}

impl<F: Real> GtlmModel<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, f, v) = (config.d_model, config.d_ffn, config.vocab_size);
        let s_d = 1.0 / (d as f64).sqrt();
        let s_f = 1.0 / (f as f64).sqrt();
        let ones = || Mat::from_fn(1, d, |_, _| F::one());
        let embed = uniform(&mut rng, v, d, 1.0);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                attn_norm: ones(),
                wq: uniform(&mut rng, d, d, s_d),
                wk: uniform(&mut rng, d, d, s_d),
                wv: uniform(&mut rng, d, d, s_d),
                wo: uniform(&mut rng, d, d, s_d),
                ffn_norm: ones(),
                w_gate: uniform(&mut rng, d, f, s_d),
                w_up: uniform(&mut rng, d, f, s_d),
                w_down: uniform(&mut rng, f, d, s_f),
            })
            .collect();
        let unembed = uniform(&mut rng, d, v, s_d);
        let bias = init_bias_params(&config.bias, seed ^ 0x6a09_e667_f3bc_c908);
        Ok(Self { config, params: ModelParams { embed, layers, final_norm: ones(), unembed, bias } })
    }

    pub fn n_leaves(&self) -> usize {
        let mut n = 0;
        self.params.map(&mut |_, _, _| n += 1);
        n
    }

    pub fn cast<G: Real>(&self) -> GtlmModel<G> {
        GtlmModel { config: self.config, params: self.params.map(&mut |_, _, m| m.cast()) }
    }

    /// The same weights with all bias machinery removed.
    pub fn stripped(&self) -> Self {
        Self { config: self.config.stripped(), params: self.params.clone() }
    }

    pub fn with_sources(&self, sources: BiasSources) -> Self {
        Self { config: ModelConfig { sources, ..self.config }, params: self.params.clone() }
    }

    /// Binds every leaf to `tape`; leaf `i` of declaration order gets parameter index `i`.
    pub fn bind(&self, tape: &mut Tape<F>, trainable: Trainable<'_>) -> ModelParams<Var> {
        let sources = self.config.sources;
        let mut index = 0;
        self.params.map(&mut |_, g, m| {
            index += 1;
            tape.param(index - 1, m.clone(), trainable(g) && sources.enabled(g))
        })
    }

    pub fn feature_inputs(&self, g: &TextAttributedGraph) -> Result<Option<Arc<FeatureInputs<F>>>, ModelError> {
        if !self.config.sources.any() {
            return Ok(None);
        }
        let feats = compute_features(g, &self.config.bias.feature_config())?;
        Ok(Some(Arc::new(FeatureInputs::new(&feats, &self.config.bias)?)))
    }

    pub fn prepare(&self, g: &TextAttributedGraph, permutation: &[usize]) -> Result<Prepared<F>, ModelError> {
        let features = self.feature_inputs(g)?;
        self.prepare_layout(build_layout(g, permutation)?, features)
    }

    pub fn prepare_layout(&self, layout: TokenLayout, features: Option<Arc<FeatureInputs<F>>>) -> Result<Prepared<F>, ModelError> {
        if layout.len() > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong { len: layout.len(), max: self.config.max_seq_len });
        }
        if layout.is_empty() {
            return Err(ModelError::ShapeMismatch("empty token stream".into()));
        }
        if let Some(&tok) = layout.tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(ModelError::ShapeMismatch(format!("token {tok} outside vocabulary")));
        }
        let token_index = match &features {
            Some(x) => token_bias_index(&layout.node_index, x.n, self.config.n_heads),
            None => Vec::new(),
        };
        Ok(Prepared {
            mask: Arc::new(build_mask(&layout)),
            rope: Arc::new(RopeTable::new(&layout.position, self.config.d_head, self.config.rope_base)),
            tokens: Arc::new(layout.tokens.iter().map(|&t| t as usize).collect()),
            targets: Arc::new(layout.loss_targets.clone()),
            features,
            token_index,
            layout,
        })
    }

    /// Builds the forward graph and returns the logits variable and, if asked, attention variables.
    pub fn forward_tape(
        &self,
        tape: &mut Tape<F>,
        p: &ModelParams<Var>,
        prep: &Prepared<F>,
        capture: bool,
    ) -> (Var, Vec<Vec<Var>>) {
        let cfg = &self.config;
        let t = prep.layout.len();
        let node_bias = match &prep.features {
            Some(x) => node_bias_vars(tape, &p.bias, x, &cfg.bias, cfg.sources),
            None => vec![None; cfg.n_layers],
        };
        let mut x = tape.embed_rows(p.embed, prep.tokens.clone());
        let mut maps = Vec::new();
        for (l, lp) in p.layers.iter().enumerate() {
            let bias: Option<Vec<Var>> = node_bias[l]
                .map(|nb| prep.token_index.iter().map(|idx| tape.gather(nb, idx.clone(), t, t)).collect());
            let (y, attn) = attention_block(tape, lp, x, prep, bias.as_deref(), cfg);
            if capture {
                maps.push(attn);
            }
            x = ffn_block(tape, lp, y);
        }
        let h = tape.rms_norm(x, F::of(RMS_EPS));
        let h = tape.mul_row(h, p.final_norm);
        (tape.matmul(h, p.unembed), maps)
    }

    pub fn forward_prepared(&self, prep: &Prepared<F>, capture: bool) -> ForwardOutput<F> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, &|_| false);
        let (logits, maps) = self.forward_tape(&mut tape, &p, prep, capture);
        let attention = capture.then(|| maps.iter().map(|l| l.iter().map(|&v| tape.value(v).clone()).collect()).collect());
        ForwardOutput { logits: tape.value(logits).clone(), attention }
    }

    pub fn forward(&self, g: &TextAttributedGraph, permutation: &[usize], capture: bool) -> Result<ForwardOutput<F>, ModelError> {
        Ok(self.forward_prepared(&self.prepare(g, permutation)?, capture))
    }

    /// Mean answer-span loss and its gradient for every leaf (`None` for frozen or unused leaves).
    pub fn loss_and_grad(&self, prep: &Prepared<F>, trainable: Trainable<'_>) -> Result<(F, Vec<Option<Mat<F>>>), ModelError> {
        if prep.targets.is_empty() {
            return Err(ModelError::EmptyAnswerSpan);
        }
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, trainable);
        let (logits, _) = self.forward_tape(&mut tape, &p, prep, false);
        let loss = tape.cross_entropy(logits, prep.targets.clone());
        let value = tape.value(loss).get(0, 0);
        Ok((value, tape.backward(loss, self.n_leaves())))
    }

    pub fn loss_prepared(&self, prep: &Prepared<F>) -> Result<F, ModelError> {
        loss(&self.forward_prepared(prep, false).logits, &prep.layout)
    }
}

fn attention_block<F: Real>(
    tape: &mut Tape<F>,
    lp: &LayerParams<Var>,
    x: Var,
    prep: &Prepared<F>,
    bias: Option<&[Var]>,
    cfg: &ModelConfig,
) -> (Var, Vec<Var>) {
    let dh = cfg.d_head;
    let h = tape.rms_norm(x, F::of(RMS_EPS));
    let h = tape.mul_row(h, lp.attn_norm);
    let q = tape.matmul(h, lp.wq);
    let k = tape.matmul(h, lp.wk);
    let v = tape.matmul(h, lp.wv);
    let scale = F::one() / F::of(dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    let mut maps = Vec::with_capacity(cfg.n_heads);
    for head in 0..cfg.n_heads {
        let qh = tape.slice_cols(q, head * dh, dh);
        let kh = tape.slice_cols(k, head * dh, dh);
        let vh = tape.slice_cols(v, head * dh, dh);
        let qh = tape.rope(qh, prep.rope.clone());
        let kh = tape.rope(kh, prep.rope.clone());
        let s = tape.matmul_bt(qh, kh);
        let mut s = tape.scale(s, scale);
        if let Some(b) = bias {
            s = tape.add(s, b[head]);
        }
        let a = tape.masked_softmax(s, prep.mask.clone());
        maps.push(a);
        heads.push(tape.matmul(a, vh));
    }
    let o = tape.concat_cols(&heads);
    let o = tape.matmul(o, lp.wo);
    (tape.add(x, o), maps)
}

fn ffn_block<F: Real>(tape: &mut Tape<F>, lp: &LayerParams<Var>, x: Var) -> Var {
    let h = tape.rms_norm(x, F::of(RMS_EPS));
    let h = tape.mul_row(h, lp.ffn_norm);
    let gate = tape.matmul(h, lp.w_gate);
    let gate = tape.silu(gate);
    let up = tape.matmul(h, lp.w_up);
    let z = tape.mul(gate, up);
    let z = tape.matmul(z, lp.w_down);
    tape.add(x, z)
}

/// Rotates each row's pairs `(2m, 2m+1)` by `position · base^(−2m/d)`.
pub fn rope_rotate<F: Real>(vectors: &Mat<F>, positions: &[usize], base: f64) -> Mat<F> {
    let table = RopeTable::<F>::new(positions, vectors.cols, base);
    let mut tape = Tape::new();
    let x = tape.constant(vectors.clone());
    let y = tape.rope(x, Arc::new(table));
    tape.value(y).clone()
}

/// One attention sublayer (norm, biased masked attention, output projection, residual) on
/// plain matrices. `token_bias` holds one `T × T` matrix per head.
pub fn attention_layer<F: Real>(
    model: &GtlmModel<F>,
    layer: usize,
    hidden: &Mat<F>,
    prep: &Prepared<F>,
    token_bias: Option<&[Mat<F>]>,
) -> Result<(Mat<F>, Vec<Mat<F>>), ModelError> {
    let cfg = &model.config;
    let t = prep.layout.len();
    if hidden.shape() != (t, cfg.d_model) {
        return Err(ModelError::ShapeMismatch(format!("hidden {:?}, expected ({t}, {})", hidden.shape(), cfg.d_model)));
    }
    if let Some(b) = token_bias {
        if b.len() != cfg.n_heads || b.iter().any(|m| m.shape() != (t, t)) {
            return Err(ModelError::ShapeMismatch(format!("token bias must be {} matrices of {t}×{t}", cfg.n_heads)));
        }
    }
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, &|_| false);
    let x = tape.constant(hidden.clone());
    let bias: Option<Vec<Var>> = token_bias.map(|b| b.iter().map(|m| tape.constant(m.clone())).collect());
    let (y, maps) = attention_block(&mut tape, &p.layers[layer], x, prep, bias.as_deref(), cfg);
    Ok((tape.value(y).clone(), maps.iter().map(|&m| tape.value(m).clone()).collect()))
}

/// Mean negative log-likelihood of the supervised answer tokens.
pub fn loss<F: Real>(logits: &Mat<F>, layout: &TokenLayout) -> Result<F, ModelError> {
    if layout.loss_targets.is_empty() {
        return Err(ModelError::EmptyAnswerSpan);
    }
    let mut tape = Tape::new();
    let x = tape.constant(logits.clone());
    let l = tape.cross_entropy(x, Arc::new(layout.loss_targets.clone()));
    Ok(tape.value(l).get(0, 0))
}
