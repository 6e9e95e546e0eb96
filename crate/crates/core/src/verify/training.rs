//! Scaled-down training runs: bias-only probes on a frozen random backbone and source ablations.

use std::time::Instant;

use serde::Serialize;

use super::VerifyError;
use crate::bias::BiasSources;
use crate::data::{evaluate_accuracy, generate, training_graph, Task, TaskSpec};
use crate::graph::QaRecord;
use crate::layout::identity_permutation;
use crate::model::{AdamState, GtlmModel, ModelConfig, TrainConfig};
use crate::tensor::Real;

#[derive(Debug, Clone, Serialize)]
pub struct ProbeSetup {
    pub task: Task,
    pub sizes: (usize, usize),
    pub n_train: usize,
    pub n_test: usize,
    pub train: TrainConfig,
    /// Seed of the dataset; `train.seed` drives initialization and shuffling.
    pub data_seed: u64,
}

impl ProbeSetup {
    /// Bias-only training on the component probe: the backbone and output head stay at their
    /// random initialization.
    pub fn component_probe(seed: u64) -> Self {
        let model = ModelConfig::default();
        Self {
            task: Task::ComponentProbe,
            sizes: (8, 14),
            n_train: 2000,
            n_test: 400,
            train: TrainConfig { epochs: 6, lr: 0.0, lr_bias: 3e-2, batch_size: 32, seed, model, ..TrainConfig::default() },
            data_seed: seed,
        }
    }

    /// Backbone and biases train together; the ablation compares bias sources on this task.
    pub fn directed_reachability(seed: u64) -> Self {
        let base = Self::component_probe(seed);
        Self {
            task: Task::DirectedReachability,
            n_train: 1000,
            train: TrainConfig { epochs: 10, lr: 1e-3, lr_bias: 1e-2, ..base.train },
            ..base
        }
    }

    pub fn with_sources(mut self, sources: BiasSources) -> Self {
        self.train.model.sources = sources;
        self
    }

    pub fn records(&self) -> Result<(Vec<QaRecord>, Vec<QaRecord>), VerifyError> {
        let spec = TaskSpec::new(self.task, self.data_seed).with_sizes(self.sizes.0, self.sizes.1).with_counts(self.n_train, 1, self.n_test);
        let ds = generate(&spec)?;
        Ok((ds.train, ds.test))
    }
}

#[derive(Debug, Clone)]
pub struct ProbeOutcome<F: Real> {
    pub model: GtlmModel<F>,
    /// Same weights with every bias source switched off, never trained.
    pub control: GtlmModel<F>,
    pub accuracy: f64,
    pub control_accuracy: f64,
    pub losses: Vec<f64>,
    pub test: Vec<QaRecord>,
    pub seconds: f64,
}

impl<F: Real> ProbeOutcome<F> {
    pub fn margin(&self) -> f64 {
        self.accuracy - self.control_accuracy
    }
}

/// Trains per `setup`, then scores held-out accuracy for the trained model and its zero-bias twin.
pub fn train_probe<F: Real>(setup: &ProbeSetup, mut log: impl FnMut(usize, f64)) -> Result<ProbeOutcome<F>, VerifyError> {
    let start = Instant::now();
    let (train, test) = setup.records()?;
    let mut model = GtlmModel::<F>::new(setup.train.model, setup.train.seed)?;
    let control = model.stripped();
    let prepared = train
        .iter()
        .map(|r| {
            let g = training_graph(r)?;
            Ok(model.prepare(&g, &identity_permutation(&g))?)
        })
        .collect::<Result<Vec<_>, VerifyError>>()?;
    let mut state = AdamState::from_config(&model, &setup.train);
    let losses = model.fit(&prepared, &setup.train, &mut state, &mut log)?;
    let format = setup.task.answer_format();
    let accuracy = evaluate_accuracy(&model, &test, &format, 8)?.accuracy;
    let control_accuracy = evaluate_accuracy(&control, &test, &format, 8)?.accuracy;
    Ok(ProbeOutcome { model, control, accuracy, control_accuracy, losses, test, seconds: start.elapsed().as_secs_f64() })
}
