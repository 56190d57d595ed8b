//! Loss, optimizer, batching, the training loop, and checkpoint files.

mod adam;
mod batch;
mod checkpoint;
mod loss;
mod trainer;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use batch::{make_batches, Batch, Batches, LabeledSequence};
pub use checkpoint::{Checkpoint, CheckpointError, TrainingMeta, CHECKPOINT_MAGIC, FORMAT_VERSION};
pub use loss::bce_loss;
pub use trainer::{
    encode_examples, encode_text, evaluate, evaluate_with_loss, init_model, prepare, train,
    EpochRecord, TrainData, TrainOutcome,
};

use thiserror::Error;

use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::text::TextError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sequence with no tokens")]
    EmptySequence,
    #[error("{sequences} sequences but {labels} labels")]
    LabelCount { sequences: usize, labels: usize },
    #[error("label {0} is not 0 or 1")]
    BadLabel(f64),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged {
        epoch: usize,
        step: usize,
        reason: String,
        last_good: Box<Checkpoint>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Text(#[from] TextError),
}
