use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GtlmModel, ModelConfig, ModelError, Prepared};
use crate::params::ParamGroup;
use crate::tensor::{Mat, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "32")]
    F32,
    #[default]
    #[serde(rename = "64")]
    F64,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "32" | "f32" => Ok(Self::F32),
            "64" | "f64" => Ok(Self::F64),
            other => Err(format!("unknown precision '{other}' (expected 32 or 64)")),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::F32 => "32",
            Self::F64 => "64",
        })
    }
}

/// Model plus optimizer settings; read from and written to TOML.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_bias: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub precision: Precision,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-3,
            lr_bias: 1e-2,
            batch_size: 16,
            seed: 0,
            precision: Precision::F64,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.model.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// First and second moment estimates for every leaf, in declaration order.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Mat<F>>,
    v: Vec<Mat<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(model: &GtlmModel<F>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let mut shapes = Vec::new();
        model.params.map(&mut |_, _, m| shapes.push(m.shape()));
        let zeros: Vec<Mat<F>> = shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect();
        Self { step: 0, beta1, beta2, eps, m: zeros.clone(), v: zeros }
    }

    pub fn from_config(model: &GtlmModel<F>, cfg: &TrainConfig) -> Self {
        Self::new(model, cfg.beta1, cfg.beta2, cfg.adam_eps)
    }
}

fn trainable_for(lr: f64, lr_bias: f64) -> impl Fn(ParamGroup) -> bool + Sync {
    move |g: ParamGroup| if g.is_bias() { lr_bias > 0.0 } else { lr > 0.0 }
}

impl<F: Real> GtlmModel<F> {
    /// Mean loss over `batch` and the summed-then-averaged gradient. Examples run in parallel;
    /// accumulation follows batch order so results do not depend on scheduling.
    pub fn batch_gradient(
        &self,
        batch: &[Prepared<F>],
        trainable: &(dyn Fn(ParamGroup) -> bool + Sync),
    ) -> Result<(F, Vec<Option<Mat<F>>>), ModelError> {
        let per: Vec<(F, Vec<Option<Mat<F>>>)> =
            batch.par_iter().map(|p| self.loss_and_grad(p, trainable)).collect::<Result<_, _>>()?;
        let n = F::of(batch.len() as f64);
        let mut total = F::zero();
        let mut acc: Vec<Option<Mat<F>>> = vec![None; self.n_leaves()];
        for (l, grads) in per {
            total = total + l;
            for (slot, g) in acc.iter_mut().zip(grads) {
                match (slot.as_mut(), g) {
                    (Some(a), Some(g)) => a.add_assign(&g),
                    (None, Some(g)) => *slot = Some(g),
                    _ => {}
                }
            }
        }
        for g in acc.iter_mut().flatten() {
            for x in g.data.iter_mut() {
                *x = *x / n;
            }
        }
        Ok((total / n, acc))
    }

    /// One Adam step with `lr` on backbone leaves and `lr_bias` on bias leaves.
    /// A zero rate freezes the corresponding leaves exactly.
    pub fn train_step(&mut self, batch: &[Prepared<F>], lr: f64, lr_bias: f64, state: &mut AdamState<F>) -> Result<F, ModelError> {
        if !(lr >= 0.0 && lr_bias >= 0.0 && lr.is_finite() && lr_bias.is_finite()) {
            return Err(ModelError::InvalidConfig(format!("learning rates must be finite and non-negative (lr={lr}, lr_bias={lr_bias})")));
        }
        if batch.is_empty() {
            return Err(ModelError::InvalidConfig("empty batch".into()));
        }
        let trainable = trainable_for(lr, lr_bias);
        let (loss, grads) = self.batch_gradient(batch, &trainable)?;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss(loss.as_f64()));
        }
        state.step += 1;
        let t = state.step as i32;
        let (b1, b2) = (state.beta1, state.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let mut i = 0;
        let AdamState { m, v, eps, .. } = state;
        self.params.visit_mut(&mut |group, w| {
            let k = i;
            i += 1;
            let rate = if group.is_bias() { lr_bias } else { lr };
            let Some(g) = &grads[k] else { return };
            if rate == 0.0 {
                return;
            }
            let (mk, vk) = (&mut m[k], &mut v[k]);
            for j in 0..w.data.len() {
                let gj = g.data[j];
                mk.data[j] = F::of(b1) * mk.data[j] + F::of(1.0 - b1) * gj;
                vk.data[j] = F::of(b2) * vk.data[j] + F::of(1.0 - b2) * gj * gj;
                let mh = mk.data[j] / F::of(c1);
                let vh = vk.data[j] / F::of(c2);
                w.data[j] = w.data[j] - F::of(rate) * mh / (vh.sqrt() + F::of(*eps));
            }
        });
        self.params.bias.pin();
        Ok(loss)
    }

    /// Shuffled mini-batch epochs. `log` receives `(epoch, mean loss)`.
    pub fn fit(
        &mut self,
        data: &[Prepared<F>],
        cfg: &TrainConfig,
        state: &mut AdamState<F>,
        mut log: impl FnMut(usize, f64),
    ) -> Result<Vec<f64>, ModelError> {
        let mut history = Vec::with_capacity(cfg.epochs);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for epoch in 0..cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let batch: Vec<Prepared<F>> = chunk.iter().map(|&i| data[i].clone()).collect();
                sum += self.train_step(&batch, cfg.lr, cfg.lr_bias, state)?.as_f64();
                batches += 1;
            }
            let mean = sum / batches.max(1) as f64;
            log(epoch, mean);
            history.push(mean);
        }
        Ok(history)
    }
}
