//! JSON checkpoints: the model config followed by every leaf, in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GtlmModel, ModelConfig, ModelError};
use crate::tensor::{Mat, Real};

const FORMAT: &str = "gtlm-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    format: String,
    pub config: ModelConfig,
    tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_model<F: Real>(model: &GtlmModel<F>) -> Self {
        let mut tensors = Vec::new();
        model.params.map(&mut |name, _, m| {
            tensors.push(TensorRecord { name, rows: m.rows, cols: m.cols, data: m.data.iter().map(|x| x.as_f64()).collect() })
        });
        Self { format: FORMAT.into(), config: model.config, tensors }
    }

    pub fn into_model<F: Real>(self) -> Result<GtlmModel<F>, ModelError> {
        if self.format != FORMAT {
            return Err(ModelError::Checkpoint(format!("unsupported format '{}'", self.format)));
        }
        let mut model = GtlmModel::<F>::new(self.config, 0)?;
        let expected = model.params.names();
        if expected.len() != self.tensors.len() {
            return Err(ModelError::Checkpoint(format!("expected {} tensors, found {}", expected.len(), self.tensors.len())));
        }
        let mut shapes = Vec::new();
        model.params.map(&mut |_, _, m| shapes.push(m.shape()));
        for ((rec, (name, _)), shape) in self.tensors.iter().zip(&expected).zip(&shapes) {
            if &rec.name != name || (rec.rows, rec.cols) != *shape || rec.data.len() != rec.rows * rec.cols {
                return Err(ModelError::Checkpoint(format!(
                    "tensor '{}' {}×{} does not match expected '{name}' {}×{}",
                    rec.name, rec.rows, rec.cols, shape.0, shape.1
                )));
            }
        }
        let mut it = self.tensors.into_iter();
        model.params.visit_mut(&mut |_, m| {
            let rec = it.next().expect("count checked");
            *m = Mat::from_vec(rec.rows, rec.cols, rec.data.into_iter().map(F::of).collect());
        });
        model.params.bias.pin();
        Ok(model)
    }
}

pub fn save_checkpoint<F: Real>(model: &GtlmModel<F>, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let text = serde_json::to_string(&Checkpoint::from_model(model)).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    fs::write(path, text).map_err(|e| ModelError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint<F: Real>(path: impl AsRef<Path>) -> Result<GtlmModel<F>, ModelError> {
    let text = fs::read_to_string(path).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    ck.into_model()
}
