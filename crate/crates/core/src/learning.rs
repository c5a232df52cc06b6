//! Gradient estimation from dyadic states, reference oracles, optimizers and
//! the training loop.

mod gradient;
mod loss;
mod optim;
mod train;

pub use gradient::{backprop_oracle, finite_difference_oracle, weight_gradient, GradientEstimate};
pub use loss::{log_sum_exp, one_hot, softmax, LossKind};
pub use optim::{optimizer_step, OptimizerKind, OptimizerState};
pub use train::{accuracy, mean_loss, train, train_with_observer, BatchRecord, EpochRecord, MetricToggles, TrainConfig, TrainHistory};

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::inference::InferenceError;
use crate::linalg::LinalgError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum LearningError {
    #[error("cannot estimate a gradient from a diverged state")]
    DivergedState,
    #[error("gradient has {got} layers, network has {expected}")]
    LayerCount { expected: usize, got: usize },
    #[error("gradient layer {layer} has shape {got:?}, weights are {expected:?}")]
    ShapeMismatch {
        layer: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training setup: {0}")]
    InvalidConfig(String),
    #[error("training aborted: inference diverged for a full epoch (epoch {epoch}, batch {batch})")]
    AbortedDiverged {
        epoch: usize,
        batch: usize,
        history: Box<TrainHistory>,
    },
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

pub type Result<T> = std::result::Result<T, LearningError>;
