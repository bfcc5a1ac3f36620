//! Dense f64 inference and training.

mod data;
mod gauss;
mod grad;
mod model;
mod train;

pub use data::{Dataset, Split, SyntheticDatasetCfg};
pub use gauss::{gaussianity_report, histogram_mse, GaussRow, HIST_BINS, HIST_RANGE};
pub use grad::{softmax_cross_entropy, Gradients, Step};
pub use model::{Mode, Model, Tensor, BN_MOMENTUM};
pub use train::{initialize, toy_architecture, train, train_toy, EpochStats, TrainCfg, Trained};

use thiserror::Error;

use crate::ir::{NetworkIR, Violation};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} outside {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("network fails validation: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Evaluation chunk size; results do not depend on it.
const EVAL_CHUNK: usize = 256;

pub fn forward(net: &NetworkIR, batch: &Tensor, mode: Mode) -> Result<Tensor, EngineError> {
    Model::from_ir(net)?.forward(batch, mode)
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn accuracy_of(model: &Model, data: &Dataset) -> Result<f64, EngineError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, labels) = data.batch(chunk);
        let logits = model.forward(&x, Mode::Eval)?;
        for (n, &label) in labels.iter().enumerate() {
            if argmax(logits.sample(n)) == label as usize {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Eval-mode top-1 accuracy.
pub fn accuracy(net: &NetworkIR, data: &Dataset) -> Result<f64, EngineError> {
    accuracy_of(&Model::from_ir(net)?, data)
}
