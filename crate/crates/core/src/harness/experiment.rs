use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig};
use super::data::{load_mnist_dir, synth_blobs, Dataset};
use super::HarnessError;
use crate::analysis::lipschitz_estimate;
use crate::learning::{accuracy, train_with_observer, BatchRecord, LearningError};
use crate::model::{init_weights_with_bias, save_checkpoint, NetworkParams};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.toml";

/// Training, validation and (optional) test data for one run.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Option<Dataset>,
}

/// Loads the configured source, applies the subset and the validation split.
pub fn load_experiment_data(cfg: &ExperimentConfig) -> Result<ExperimentData, HarnessError> {
    let (full, test) = match cfg.data_source()? {
        DataSource::Mnist(dir) => {
            let (train, test) = load_mnist_dir(&dir)?;
            (train, Some(test))
        }
        DataSource::Blobs(b) => (synth_blobs(b.classes, b.dim, b.n_per_class, b.separation, cfg.seed)?.shuffled(cfg.seed), None),
    };
    let pool = match cfg.subset {
        Some(n) => full.head(n),
        None => full,
    };
    let (train, validation) = pool.split_validation(cfg.validation_fraction, cfg.seed)?;
    Ok(ExperimentData { train, validation, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub final_train_loss: f64,
    pub final_val_acc: Option<f64>,
    pub final_test_acc: Option<f64>,
    pub final_lipschitz: f64,
    /// Some batch diverged during inference.
    pub diverged: bool,
    /// Training stopped because inference kept diverging.
    pub aborted: bool,
    pub epochs_completed: usize,
    pub batches: usize,
    pub diverged_batches: usize,
}

/// Streams batch records as CSV rows.
pub struct MetricsWriter<W: Write> {
    out: W,
    layers: usize,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W, layers: usize) -> std::io::Result<Self> {
        let mut header = vec!["epoch", "batch", "train_loss", "test_acc", "lipschitz", "diverged"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        header.extend((0..layers).map(|k| format!("angle_layer_{k}")));
        header.extend((0..layers).map(|k| format!("l2diff_layer_{k}")));
        writeln!(out, "{}", header.join(","))?;
        Ok(MetricsWriter { out, layers })
    }

    pub fn write(&mut self, r: &BatchRecord) -> std::io::Result<()> {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), num);
        let mut row = vec![
            r.epoch.to_string(),
            r.batch.to_string(),
            num(r.train_loss),
            opt(r.test_acc),
            opt(r.lipschitz),
            u8::from(r.diverged).to_string(),
        ];
        for k in 0..self.layers {
            row.push(opt(r.angles.as_ref().and_then(|a| a[k])));
        }
        for k in 0..self.layers {
            row.push(opt(r.l2diff.as_ref().map(|d| d[k])));
        }
        writeln!(self.out, "{}", row.join(","))
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Trains one configuration and writes `metrics.csv`, `summary.json`, the
/// final checkpoint and the resolved config into `out_dir`.
///
/// A run that aborts because inference keeps diverging still writes all
/// files and is reported as [`HarnessError::AbortedDiverged`].
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<ExperimentSummary, HarnessError> {
    cfg.validate()?;
    let data = load_experiment_data(cfg)?;
    run_experiment_with_data(cfg, &data, out_dir)
}

/// As [`run_experiment`] with preloaded data.
pub fn run_experiment_with_data(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    out_dir: impl AsRef<Path>,
) -> Result<ExperimentSummary, HarnessError> {
    cfg.validate()?;
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(io_err(out))?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml_string()).map_err(io_err(out))?;

    let mut params = init_weights_with_bias(&cfg.layer_specs()?, cfg.bias_mode(), cfg.seed)?;
    let metrics_path = out.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(io_err(&metrics_path))?;
    let mut writer = MetricsWriter::new(BufWriter::new(file), params.depth()).map_err(io_err(&metrics_path))?;
    let mut write_error = None;
    let outcome = train_with_observer(&data.train, data.test.as_ref(), &mut params, &cfg.train_config(), |r| {
        if write_error.is_none() {
            write_error = writer.write(r).err();
        }
    });
    writer.flush().map_err(io_err(&metrics_path))?;
    if let Some(e) = write_error {
        return Err(io_err(&metrics_path)(e));
    }

    let (history, aborted) = match outcome {
        Ok(h) => (h, false),
        Err(LearningError::AbortedDiverged { history, .. }) => (*history, true),
        Err(e) => return Err(e.into()),
    };
    let last = history.batches.last();
    let summary = ExperimentSummary {
        final_train_loss: last.map_or(f64::NAN, |b| b.train_loss),
        final_val_acc: finite_accuracy(&params, &data.validation)?,
        final_test_acc: match &data.test {
            Some(t) => finite_accuracy(&params, t)?,
            None => None,
        },
        final_lipschitz: lipschitz_estimate(&params),
        diverged: history.diverged(),
        aborted,
        epochs_completed: history.epochs.len() - usize::from(aborted),
        batches: history.batches.len(),
        diverged_batches: history.batches.iter().filter(|b| b.diverged).count(),
    };
    write_outputs(out, &params, &summary)?;
    if aborted {
        Err(HarnessError::AbortedDiverged(Box::new(summary)))
    } else {
        Ok(summary)
    }
}

fn finite_accuracy(params: &NetworkParams, data: &Dataset) -> Result<Option<f64>, HarnessError> {
    if data.is_empty() {
        return Ok(None);
    }
    Ok(Some(accuracy(params, data)?))
}

fn write_outputs(out: &Path, params: &NetworkParams, summary: &ExperimentSummary) -> Result<(), HarnessError> {
    let summary_path = out.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(&summary_path, json + "\n").map_err(io_err(&summary_path))?;
    save_checkpoint(params, out.join(CHECKPOINT_FILE))?;
    Ok(())
}

/// Paths of the files a run writes.
pub fn output_paths(out_dir: impl AsRef<Path>) -> [PathBuf; 4] {
    let d = out_dir.as_ref();
    [
        d.join(METRICS_FILE),
        d.join(SUMMARY_FILE),
        d.join(CHECKPOINT_FILE),
        d.join(CONFIG_FILE),
    ]
}
