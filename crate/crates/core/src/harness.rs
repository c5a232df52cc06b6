//! Data loading, experiment configuration, training runs with metric files,
//! and the seeded theory-check report.

mod config;
mod data;
mod experiment;
mod theory;

pub use config::{BlobSpec, DataSource, ExperimentConfig, OptimizerName, DATA_ENV};
pub use data::{
    load_mnist_dir, load_mnist_idx, read_idx_images, read_idx_labels, synth_blobs, DataError, Dataset,
    IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use experiment::{
    load_experiment_data, output_paths, run_experiment, run_experiment_with_data, ExperimentData, ExperimentSummary,
    MetricsWriter, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE, SUMMARY_FILE,
};
pub use theory::{run_theory_checks, AnchorValue, CheckOutcome, TheoryConfig, TheoryReport};

use std::path::PathBuf;

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::inference::InferenceError;
use crate::learning::LearningError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("training aborted after repeated inference divergence")]
    AbortedDiverged(Box<ExperimentSummary>),
}
