use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::backbones::BackboneName;
use crate::model_zoo::{
    build_model_with, BackboneSpec, DenseHead, HeadSpec, ModelHandle, SourceRecord, WeightSource, ZooError,
};
use crate::nn::WeightStore;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HEAD_WEIGHTS_FILE: &str = "head.safetensors";

/// The head weights of the best epoch plus what is needed to rebuild the
/// model around them. Backbone parameters are referenced by source and
/// content hash rather than copied.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub path: Option<PathBuf>,
    pub backbone_name: BackboneName,
    pub seed: u64,
    pub epoch: usize,
    pub monitor: String,
    pub monitored_value: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub spec: BackboneSpec,
    pub head_spec: HeadSpec,
    pub weights_origin: SourceRecord,
    pub weight_source: Option<WeightSource>,
    pub head: DenseHead,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    backbone_name: BackboneName,
    seed: u64,
    epoch: usize,
    monitor: String,
    monitored_value: f64,
    train_accuracy: f64,
    val_accuracy: f64,
    spec: BackboneSpec,
    head_spec: HeadSpec,
    weights_origin: SourceRecord,
    weight_source: Option<WeightSource>,
    /// File holding the head parameters, relative to the checkpoint directory.
    weights: String,
    weights_hash: String,
}

impl Checkpoint {
    /// Writes `checkpoint.json` and the head weights into `dir`.
    pub fn save(&mut self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir)?;
        let bytes = self.head.to_store().to_bytes()?;
        std::fs::write(dir.join(HEAD_WEIGHTS_FILE), &bytes)?;
        let file = CheckpointFile {
            backbone_name: self.backbone_name,
            seed: self.seed,
            epoch: self.epoch,
            monitor: self.monitor.clone(),
            monitored_value: self.monitored_value,
            train_accuracy: self.train_accuracy,
            val_accuracy: self.val_accuracy,
            spec: self.spec.clone(),
            head_spec: self.head_spec.clone(),
            weights_origin: self.weights_origin.clone(),
            weight_source: self.weight_source.clone(),
            weights: HEAD_WEIGHTS_FILE.to_string(),
            weights_hash: crate::nn::sha256_hex(&bytes),
        };
        std::fs::write(
            dir.join(CHECKPOINT_FILE),
            serde_json::to_string_pretty(&file).expect("checkpoint serializes"),
        )?;
        self.path = Some(dir.to_path_buf());
        Ok(())
    }

    /// Rebuilds the model: backbone from `source` (or the one recorded at
    /// training time), head from the checkpoint. The backbone must hash to
    /// the value recorded when the checkpoint was taken.
    pub fn restore(&self, source: Option<&WeightSource>) -> Result<ModelHandle, TrainError> {
        let source = source
            .or(self.weight_source.as_ref())
            .cloned()
            .unwrap_or_default();
        let mut model = build_model_with(&self.spec, &self.head_spec, self.head.num_classes(), &source, self.seed)?;
        if model.weights_origin().content_hash != self.weights_origin.content_hash {
            return Err(ZooError::WeightsUnavailable {
                backbone: self.backbone_name,
                reason: format!(
                    "backbone hash {} differs from the checkpoint's {}",
                    model.weights_origin().content_hash,
                    self.weights_origin.content_hash
                ),
            }
            .into());
        }
        model.head = self.head.clone();
        Ok(model)
    }
}

/// Reads a checkpoint directory written by [`Checkpoint::save`].
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, TrainError> {
    let meta_path = dir.join(CHECKPOINT_FILE);
    let bad = |reason: String| TrainError::Format {
        path: meta_path.clone(),
        reason,
    };
    let text = std::fs::read_to_string(&meta_path)?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let bytes = std::fs::read(dir.join(&file.weights))?;
    if crate::nn::sha256_hex(&bytes) != file.weights_hash {
        return Err(bad("head weights do not match the recorded hash".into()));
    }
    let head = DenseHead::from_store(&WeightStore::from_bytes(&bytes)?, file.head_spec.dropout_rate)?;
    Ok(Checkpoint {
        path: Some(dir.to_path_buf()),
        backbone_name: file.backbone_name,
        seed: file.seed,
        epoch: file.epoch,
        monitor: file.monitor,
        monitored_value: file.monitored_value,
        train_accuracy: file.train_accuracy,
        val_accuracy: file.val_accuracy,
        spec: file.spec,
        head_spec: file.head_spec,
        weights_origin: file.weights_origin,
        weight_source: file.weight_source,
        head,
    })
}
