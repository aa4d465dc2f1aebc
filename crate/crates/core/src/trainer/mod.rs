//! The training loop: Adam on the head, early stopping, best-epoch
//! checkpoints and multi-backbone sweeps.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbones::BackboneName;
use crate::data_pipeline::{BatchStream, DataError, Split};
use crate::evaluator::{argmax, EvalError, EvalReport};
use crate::model_zoo::{Adam, DenseHead, HyperParams, ModelHandle, ZooError};
use crate::nn::WeightError;
use crate::seeding::{rng_for, tag};

mod checkpoint;
mod sweep;

pub use checkpoint::{load_checkpoint, Checkpoint, CHECKPOINT_FILE, HEAD_WEIGHTS_FILE};
pub use sweep::{run_sweep, SweepConfig, SweepEntry, SweepFailure, SweepReport};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Zoo(#[from] ZooError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed run file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    #[serde(rename = "backbone")]
    pub backbone_name: BackboneName,
    pub seed: u64,
    pub hparams: HyperParams,
    pub records: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub wall_time_s: f64,
}

impl TrainingHistory {
    pub fn file_name(backbone: BackboneName, seed: u64) -> String {
        format!("history_{backbone}_{seed}.json")
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self).expect("history serializes"))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| TrainError::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// A quantity early stopping can watch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Monitor {
    ValLoss,
    ValAccuracy,
    TrainLoss,
    TrainAccuracy,
}

impl FromStr for Monitor {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "val_loss" => Monitor::ValLoss,
            "val_accuracy" | "val_acc" => Monitor::ValAccuracy,
            "loss" | "train_loss" => Monitor::TrainLoss,
            "accuracy" | "acc" | "train_accuracy" => Monitor::TrainAccuracy,
            other => return Err(TrainError::Config(format!("unknown monitor `{other}`"))),
        })
    }
}

impl Monitor {
    pub fn value(self, r: &EpochRecord) -> f64 {
        match self {
            Monitor::ValLoss => r.val_loss,
            Monitor::ValAccuracy => r.val_accuracy,
            Monitor::TrainLoss => r.train_loss,
            Monitor::TrainAccuracy => r.train_accuracy,
        }
    }

    pub fn minimize(self) -> bool {
        matches!(self, Monitor::ValLoss | Monitor::TrainLoss)
    }

    /// Whether `value` beats `best` by more than `min_delta`.
    pub fn improves(self, value: f64, best: f64, min_delta: f64) -> bool {
        if self.minimize() {
            value < best - min_delta
        } else {
            value > best + min_delta
        }
    }
}

/// True once the monitored quantity has gone `patience` consecutive epochs
/// (at least one) without improving on its best by more than `min_delta`.
pub fn early_stop_check(
    history: &[EpochRecord],
    monitor: &str,
    patience: usize,
    min_delta: f64,
) -> Result<bool, TrainError> {
    let monitor = Monitor::from_str(monitor)?;
    let Some(first) = history.first() else {
        return Ok(false);
    };
    let mut best = monitor.value(first);
    let mut wait = 0;
    for r in &history[1..] {
        let v = monitor.value(r);
        if monitor.improves(v, best, min_delta) {
            best = v;
            wait = 0;
        } else {
            wait += 1;
        }
    }
    Ok(wait >= patience.max(1))
}

fn validate(model: &ModelHandle, train: &BatchStream, val: &BatchStream, hparams: &HyperParams) -> Result<Monitor, TrainError> {
    if !model.spec.frozen {
        return Err(TrainError::Config("only frozen backbones can be trained".into()));
    }
    if !(hparams.learning_rate.is_finite() && hparams.learning_rate > 0.0) {
        return Err(TrainError::Config(format!("learning_rate must be > 0, got {}", hparams.learning_rate)));
    }
    if hparams.batch_size == 0 {
        return Err(TrainError::Config("batch_size must be >= 1".into()));
    }
    if hparams.early_stopping.min_delta < 0.0 {
        return Err(TrainError::Config("min_delta must be >= 0".into()));
    }
    for s in [train, val] {
        if s.is_empty() {
            return Err(DataError::EmptySplit(s.split()).into());
        }
    }
    Monitor::from_str(&hparams.early_stopping.monitor)
}

fn val_metrics(model: &ModelHandle, head: &DenseHead, features: &[Vec<f64>], labels: &[usize]) -> Result<EvalReport, TrainError> {
    let probs: Vec<Vec<f64>> = features.iter().map(|f| head.predict(f)).collect();
    Ok(EvalReport::from_predictions(model.name().as_str(), Split::Val, &probs, labels)?)
}

/// Trains the head of `model` and returns its history and the best-epoch
/// checkpoint.
///
/// `seed` initializes the head and draws dropout masks; shuffling and
/// augmentation follow the streams' own seeds. Training metrics are running
/// averages over the epoch in training mode, validation metrics are exact
/// inference-mode scores. When `runs_dir` is given the history and the
/// checkpoint are persisted under `<runs_dir>/<backbone>/<seed>/`.
pub fn train(
    model: &mut ModelHandle,
    train_stream: &BatchStream,
    val_stream: &BatchStream,
    hparams: &HyperParams,
    seed: u64,
    runs_dir: Option<&Path>,
) -> Result<(TrainingHistory, Checkpoint), TrainError> {
    let monitor = validate(model, train_stream, val_stream, hparams)?;
    let es = &hparams.early_stopping;
    let started = Instant::now();
    model.reset_head(seed);

    let val_labels: Vec<usize> = val_stream.records().iter().map(|r| r.class_index).collect();
    let val_features = model.features_batch(val_stream.base_tensors());
    let cached_train = (!train_stream.is_augmented()).then(|| model.features_batch(train_stream.base_tensors()));

    // One epoch is one full pass over the training split whatever the
    // batch size, so an oversized batch is clamped.
    let batch_size = hparams.batch_size.min(train_stream.len());
    if batch_size < hparams.batch_size {
        log::warn!(
            "batch_size {} exceeds the {}-record training split; using {batch_size}",
            hparams.batch_size,
            train_stream.len()
        );
    }
    let mut adam = Adam::new(hparams.learning_rate);
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(usize, f64, DenseHead, f64)> = None;

    for epoch in 1..=hparams.max_epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        let order = train_stream.order(epoch as u64);
        for (step, indices) in order.chunks(batch_size).enumerate() {
            let features: Vec<Vec<f64>> = match &cached_train {
                Some(all) => indices.iter().map(|&i| all[i].clone()).collect(),
                None => {
                    let images: Vec<_> = indices.par_iter().map(|&i| train_stream.image(i, epoch as u64)).collect();
                    model.features_batch(&images)
                }
            };
            let targets: Vec<Vec<f64>> = indices
                .iter()
                .map(|&i| train_stream.label(i).iter().map(|&v| f64::from(v)).collect())
                .collect();
            let mut rng = rng_for(seed, &[tag::DROPOUT, epoch as u64, step as u64]);
            let masks: Vec<Vec<f64>> = features.iter().map(|_| model.head.dropout_mask(&mut rng)).collect();
            let (loss, grads) = model.head.loss_and_gradients(&features, &targets, Some(&masks));
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            for ((f, m), &i) in features.iter().zip(&masks).zip(indices) {
                if argmax(&model.head.logits(f, Some(m))) == train_stream.records()[i].class_index {
                    correct += 1;
                }
            }
            loss_sum += loss * features.len() as f64;
            seen += features.len();
            adam.apply(&mut model.head, &grads);
        }
        let val = val_metrics(model, &model.head, &val_features, &val_labels)?;
        if !val.loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_accuracy: correct as f64 / seen as f64,
            train_loss: loss_sum / seen as f64,
            val_accuracy: val.accuracy,
            val_loss: val.loss,
        };
        log::info!(
            "{} seed {seed} epoch {epoch}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            model.name(),
            record.train_loss,
            record.train_accuracy,
            record.val_loss,
            record.val_accuracy
        );
        let value = monitor.value(&record);
        if best.as_ref().map_or(true, |(_, b, _, _)| monitor.improves(value, *b, 0.0)) {
            best = Some((epoch, value, model.head.clone(), record.train_accuracy));
        }
        records.push(record);
        if early_stop_check(&records, &es.monitor, es.patience, es.min_delta)? {
            log::info!("{} seed {seed}: early stop at epoch {epoch}", model.name());
            break;
        }
    }

    let (best_epoch, monitored_value, best_head, train_accuracy, val_accuracy) = match best {
        Some((epoch, value, head, train_acc)) => {
            let val_acc = records[epoch - 1].val_accuracy;
            (epoch, value, head, train_acc, val_acc)
        }
        None => {
            // No epochs ran: checkpoint the initial weights with their
            // inference-mode scores.
            let val = val_metrics(model, &model.head, &val_features, &val_labels)?;
            let train_features = match cached_train {
                Some(f) => f,
                None => model.features_batch(train_stream.base_tensors()),
            };
            let train_labels: Vec<usize> = train_stream.records().iter().map(|r| r.class_index).collect();
            let train = val_metrics(model, &model.head, &train_features, &train_labels)?;
            let initial = EpochRecord {
                epoch: 0,
                train_accuracy: train.accuracy,
                train_loss: train.loss,
                val_accuracy: val.accuracy,
                val_loss: val.loss,
            };
            (0, monitor.value(&initial), model.head.clone(), train.accuracy, val.accuracy)
        }
    };
    if es.restore_best {
        model.head = best_head.clone();
    }

    let history = TrainingHistory {
        backbone_name: model.name(),
        seed,
        hparams: hparams.clone(),
        stopped_epoch: records.last().map_or(0, |r| r.epoch),
        best_epoch,
        records,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let mut checkpoint = Checkpoint {
        path: None,
        backbone_name: model.name(),
        seed,
        epoch: best_epoch,
        monitor: es.monitor.clone(),
        monitored_value,
        train_accuracy,
        val_accuracy,
        spec: model.spec.clone(),
        head_spec: model.head_spec.clone(),
        weights_origin: model.weights_origin().clone(),
        weight_source: model.weight_source().cloned(),
        head: best_head,
    };
    if let Some(runs) = runs_dir {
        let dir = run_dir(runs, model.name(), seed);
        history.save(&dir.join(TrainingHistory::file_name(model.name(), seed)))?;
        checkpoint.save(&dir.join("best"))?;
    }
    Ok((history, checkpoint))
}

/// `<runs_dir>/<backbone>/<seed>`
pub fn run_dir(runs_dir: &Path, backbone: BackboneName, seed: u64) -> PathBuf {
    runs_dir.join(backbone.as_str()).join(seed.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history(val_losses: &[f64]) -> Vec<EpochRecord> {
        val_losses
            .iter()
            .enumerate()
            .map(|(i, &v)| EpochRecord {
                epoch: i + 1,
                train_accuracy: 0.5,
                train_loss: 1.0,
                val_accuracy: 0.5,
                val_loss: v,
            })
            .collect()
    }

    #[test]
    fn still_improving_does_not_stop() {
        assert!(!early_stop_check(&history(&[1.0, 0.9, 0.8]), "val_loss", 2, 0.0).unwrap());
    }

    #[test]
    fn plateau_stops_after_patience_epochs() {
        let h = history(&[0.8, 0.9, 0.9, 0.9]);
        assert!(!early_stop_check(&h[..3], "val_loss", 3, 0.0).unwrap());
        assert!(early_stop_check(&h, "val_loss", 3, 0.0).unwrap());
    }

    #[test]
    fn zero_patience_stops_on_first_non_improvement() {
        let h = history(&[0.8, 0.7, 0.75]);
        assert!(!early_stop_check(&h[..2], "val_loss", 0, 0.0).unwrap());
        assert!(early_stop_check(&h, "val_loss", 0, 0.0).unwrap());
    }

    #[test]
    fn min_delta_discounts_small_gains() {
        let h = history(&[1.0, 0.99, 0.98]);
        assert!(early_stop_check(&h, "val_loss", 2, 0.05).unwrap());
        assert!(!early_stop_check(&h, "val_loss", 2, 0.0).unwrap());
    }

    #[test]
    fn accuracy_monitors_maximize() {
        let mut h = history(&[1.0, 1.0, 1.0]);
        h[1].val_accuracy = 0.6;
        h[2].val_accuracy = 0.7;
        assert!(!early_stop_check(&h, "val_accuracy", 1, 0.0).unwrap());
    }

    #[test]
    fn unknown_monitor_is_a_config_error() {
        assert!(matches!(
            early_stop_check(&history(&[1.0]), "val_f1", 3, 0.0),
            Err(TrainError::Config(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn never_fires_before_patience_plus_one_epochs(
                losses in proptest::collection::vec(0.0f64..5.0, 1..40),
                patience in 0usize..12,
            ) {
                let h = history(&losses);
                for n in 1..=h.len() {
                    if early_stop_check(&h[..n], "val_loss", patience, 0.0).unwrap() {
                        prop_assert!(n >= patience + 1);
                    }
                }
            }
        }
    }
}
