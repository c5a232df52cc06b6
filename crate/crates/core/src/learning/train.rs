use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backprop_oracle, GradientEstimate, LearningError, LossKind, OptimizerKind, OptimizerState, Result};
use crate::analysis::{grad_angle, grad_l2_diff, lipschitz_estimate};
use crate::harness::Dataset;
use crate::inference::{InferenceEngine, NudgeConfig};
use crate::model::NetworkParams;

/// Optional per-batch and per-epoch diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricToggles {
    /// Compare against backprop every n-th batch (and on the last batch of
    /// each epoch); 0 disables the comparison.
    pub grad_angle_every: usize,
    pub lipschitz_every_epoch: bool,
    /// Size of the fixed training subset on which `train_loss` is measured.
    pub monitor_size: usize,
}

impl Default for MetricToggles {
    fn default() -> Self {
        MetricToggles {
            grad_angle_every: 0,
            lipschitz_every_epoch: false,
            monitor_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub nudge: NudgeConfig,
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub metrics: MetricToggles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    /// 1-based.
    pub epoch: usize,
    /// 1-based within the epoch.
    pub batch: usize,
    /// Mean unweighted loss on the monitor subset after this batch.
    pub train_loss: f64,
    /// Only on the last batch of an epoch with a test set.
    pub test_acc: Option<f64>,
    /// Only on the last batch of an epoch when enabled.
    pub lipschitz: Option<f64>,
    pub diverged: bool,
    /// Per-layer angle (degrees) between the batch estimate and the batch
    /// backprop gradient; `None` entries are zero-norm layers.
    pub angles: Option<Vec<Option<f64>>>,
    pub l2diff: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: Option<f64>,
    pub lipschitz: Option<f64>,
    pub diverged_batches: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub batches: Vec<BatchRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// True when any batch diverged.
    pub fn diverged(&self) -> bool {
        self.batches.iter().any(|b| b.diverged)
    }
}

/// Fraction of samples whose predicted class matches the label.
pub fn accuracy(params: &NetworkParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(LearningError::EmptyDataset);
    }
    let mut hits = 0usize;
    for (x, &label) in data.inputs().iter().zip(data.labels()) {
        if params.predict(x)?.argmax() == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Mean unweighted loss over the first `n` samples.
pub fn mean_loss(params: &NetworkParams, data: &Dataset, n: usize, loss: LossKind) -> Result<f64> {
    let n = n.min(data.len());
    if n == 0 {
        return Err(LearningError::EmptyDataset);
    }
    let mut total = 0.0;
    for i in 0..n {
        total += loss.value(&params.predict(&data.inputs()[i])?, &data.target(i));
    }
    Ok(total / n as f64)
}

/// Minibatch training with dyadic gradient estimates.
///
/// Batches in which any sample diverges are skipped; when every batch of
/// an epoch-length window diverges, training stops with
/// [`LearningError::AbortedDiverged`], which carries the history so far.
pub fn train(
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    params: &mut NetworkParams,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    train_with_observer(train_set, test_set, params, cfg, |_| {})
}

/// As [`train`], calling `observe` after every batch.
pub fn train_with_observer(
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    params: &mut NetworkParams,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&BatchRecord),
) -> Result<TrainHistory> {
    if train_set.is_empty() {
        return Err(LearningError::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(LearningError::InvalidConfig("batch size must be positive".into()));
    }
    if train_set.input_dim() != params.input_dim() || train_set.classes() != params.output_dim() {
        return Err(LearningError::InvalidConfig(format!(
            "dataset is {}→{} classes, network is {}→{}",
            train_set.input_dim(),
            train_set.classes(),
            params.input_dim(),
            params.output_dim()
        )));
    }
    cfg.nudge.validate(params.depth(), cfg.loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(cfg.optimizer, params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let mut history = TrainHistory::default();
    let mut diverged_run = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut diverged_batches = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let last = b + 1 == per_epoch;
            let every = cfg.metrics.grad_angle_every;
            let compare = every > 0 && (b % every == 0 || last);
            let step = batch_gradient(train_set, batch, params, cfg, compare)?;
            let diverged = step.estimate.is_none();
            if let Some(g) = &step.estimate {
                opt.step(params, g)?;
            }
            let (angles, l2diff) = match (&step.estimate, &step.reference) {
                (Some(g), Some(bp)) => (Some(grad_angle(g, bp)?), Some(grad_l2_diff(g, bp)?)),
                _ => (None, None),
            };
            let mut record = BatchRecord {
                epoch,
                batch: b + 1,
                train_loss: mean_loss(params, train_set, cfg.metrics.monitor_size, cfg.loss)?,
                test_acc: None,
                lipschitz: None,
                diverged,
                angles,
                l2diff,
            };
            if last {
                if let Some(test) = test_set {
                    record.test_acc = Some(accuracy(params, test)?);
                }
                if cfg.metrics.lipschitz_every_epoch {
                    record.lipschitz = Some(lipschitz_estimate(params));
                }
            }
            observe(&record);
            history.batches.push(record);
            if diverged {
                diverged_batches += 1;
                diverged_run += 1;
                if diverged_run >= per_epoch {
                    push_epoch(&mut history, epoch, diverged_batches);
                    return Err(LearningError::AbortedDiverged {
                        epoch,
                        batch: b + 1,
                        history: Box::new(history),
                    });
                }
            } else {
                diverged_run = 0;
            }
        }
        push_epoch(&mut history, epoch, diverged_batches);
    }
    Ok(history)
}

fn push_epoch(history: &mut TrainHistory, epoch: usize, diverged_batches: usize) {
    let last = history.batches.last().expect("epoch has batches");
    let record = EpochRecord {
        epoch,
        train_loss: last.train_loss,
        test_acc: last.test_acc,
        lipschitz: last.lipschitz,
        diverged_batches,
    };
    history.epochs.push(record);
}

struct BatchStep {
    /// `None` when some sample diverged.
    estimate: Option<GradientEstimate>,
    reference: Option<GradientEstimate>,
}

fn batch_gradient(
    data: &Dataset,
    batch: &[usize],
    params: &NetworkParams,
    cfg: &TrainConfig,
    compare: bool,
) -> Result<BatchStep> {
    let engine = InferenceEngine::new(params, &cfg.nudge, cfg.loss)?;
    let weight = 1.0 / batch.len() as f64;
    let mut g = GradientEstimate::zeros_like(params);
    let mut reference = compare.then(|| GradientEstimate::zeros_like(params));
    for &i in batch {
        let x = &data.inputs()[i];
        let y = data.target(i);
        let report = engine.run(x, &y)?;
        if report.diverged {
            return Ok(BatchStep {
                estimate: None,
                reference: None,
            });
        }
        g.add_dyadic(weight, params, &report.state, &cfg.nudge);
        if let Some(r) = reference.as_mut() {
            r.axpy(weight, &backprop_oracle(params, x, &y, cfg.loss)?);
        }
    }
    Ok(BatchStep {
        estimate: g.is_finite().then_some(g),
        reference,
    })
}
