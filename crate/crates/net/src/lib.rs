//! A small 3D convolutional classifier with hand-written backpropagation.
//!
//! [`Model`] is a stack of conv blocks (3×3×3 conv, optional batch norm,
//! ReLU, optional 2× max pool), a flatten or global-average readout and a
//! fully connected head. Gradients are computed layer by layer in reverse;
//! every kernel parallelizes over disjoint outputs only, so results do not
//! depend on the thread count.

use std::path::PathBuf;

pub mod checkpoint;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use metrics::{ClassMetrics, Metrics};
pub use model::{ConvBlockConfig, Mode, Model, ModelConfig, Readout};
pub use optim::{Adam, AdamConfig};
pub use tensor::{cross_entropy, softmax, Tensor};
pub use train::{curves_csv, evaluate, train, train_fold, EpochRecord, Evaluation, FoldOutcome, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("fold {0} has no training samples")]
    EmptyFold(usize),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("architecture/checkpoint mismatch: {0}")]
    Mismatch(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint config: {0}")]
    Json(#[from] serde_json::Error),
}
