//! Interpretable sarcasm detection: stacked multi-head self-attention over
//! word embeddings, a bidirectional GRU, and a sigmoid classifier, all on a
//! small reverse-mode autodiff engine.

pub mod ablation;
pub mod autodiff;
pub mod gradcheck;
pub mod interpret;
pub mod metrics;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod text;
pub mod train;

pub use autodiff::{Graph, HeadDims, NodeId};
pub use interpret::{aggregate, render_report, ReportFormat, WordAttribution};
pub use metrics::{MetricsReport, DEFAULT_THRESHOLD};
pub use model::{AttentionRecord, Model, ModelConfig, ModelError};
pub use tensor::{Tensor, TensorError};
pub use text::{TokenSequence, Vocabulary};
pub use train::{Checkpoint, TrainError};
