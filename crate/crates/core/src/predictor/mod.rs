//! Portable model artifacts and single-image inference.
//!
//! An artifact directory holds `weights.bin` (backbone and head tensors in
//! one safetensors blob) and `metadata.json`, which carries everything
//! needed to preprocess inputs the way training did.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbones::BackboneName;
use crate::classes::{class_map, class_names, DiseaseClass, NUM_CLASSES};
use crate::data_pipeline::{decode_and_rescale, PreprocessConfig};
use crate::evaluator::argmax;
use crate::model_zoo::{assemble_from_stores, BackboneSpec, HeadSpec, ModelHandle, SourceRecord, WeightSource, ZooError};
use crate::nn::{sha256_hex, WeightError, WeightStore};
use crate::tensor::Tensor3;
use crate::trainer::{Checkpoint, TrainError};

mod catalog;

pub use catalog::{default_catalog, load_catalog, parse_catalog, recommend, Advice, RecommendationCatalog, ADVISORY_NOTICE};

pub const SCHEMA_VERSION: u32 = 1;
pub const WEIGHTS_BLOB: &str = "weights.bin";
pub const METADATA_FILE: &str = "metadata.json";
pub const DEFAULT_CONFIDENCE_FLOOR: f64 = 0.50;

const BACKBONE_PREFIX: &str = "backbone/";
const HEAD_PREFIX: &str = "head/";

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("artifact file not found: {0}")]
    NotFound(PathBuf),
    #[error("artifact integrity check failed: {0}")]
    Integrity(String),
    #[error("unsupported artifact schema_version {found} (expected {SCHEMA_VERSION})")]
    Version { found: u64 },
    #[error("invalid artifact metadata: {0}")]
    Validation(String),
    #[error("could not decode image: {0}")]
    Decode(String),
    #[error("recommendation catalog: {0}")]
    Catalog(String),
    #[error(transparent)]
    Zoo(#[from] ZooError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetrics {
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetadata {
    pub schema_version: u32,
    pub backbone_name: BackboneName,
    pub class_map: BTreeMap<String, usize>,
    pub input_size: usize,
    pub rescale: f32,
    pub created_at: String,
    pub metrics: ArtifactMetrics,
    /// SHA-256 of `weights.bin`.
    pub content_hash: String,
    pub spec: BackboneSpec,
    pub head_spec: HeadSpec,
    pub backbone_origin: SourceRecord,
}

impl ArtifactMetadata {
    pub fn validate(&self) -> Result<(), PredictError> {
        let bad = |m: String| Err(PredictError::Validation(m));
        if self.class_map != class_map() {
            return bad(format!("class_map must be {:?}, got {:?}", class_map(), self.class_map));
        }
        if self.spec.name != self.backbone_name || self.spec.input_size != self.input_size {
            return bad("backbone spec disagrees with backbone_name/input_size".into());
        }
        if !(self.rescale > 0.0 && self.rescale.is_finite()) {
            return bad(format!("rescale must be > 0, got {}", self.rescale));
        }
        for (name, v) in [("train_accuracy", self.metrics.train_accuracy), ("val_accuracy", self.metrics.val_accuracy)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("metrics.{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.created_at.is_empty() {
            return bad("created_at is empty".into());
        }
        if self.content_hash.len() != 64 {
            return bad("content_hash is not a SHA-256 hex digest".into());
        }
        Ok(())
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            rescale: self.rescale,
            ..PreprocessConfig::square(self.input_size)
        }
    }
}

/// Caller-supplied parts of the metadata.
#[derive(Clone, Debug, Default)]
pub struct ExportOptions {
    /// Backbone source; defaults to the one recorded in the checkpoint.
    pub weight_source: Option<WeightSource>,
    /// Defaults to the checkpoint's best-epoch scores.
    pub metrics: Option<ArtifactMetrics>,
    /// Rescale factor used in training; defaults to 1/255.
    pub rescale: Option<f32>,
    /// RFC 3339 timestamp; defaults to now.
    pub created_at: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ModelArtifact {
    pub dir: PathBuf,
    pub metadata: ArtifactMetadata,
}

/// Writes `<out_dir>/weights.bin` and `<out_dir>/metadata.json`.
pub fn export_model(checkpoint: &Checkpoint, out_dir: &Path, options: &ExportOptions) -> Result<ModelArtifact, PredictError> {
    let model = checkpoint.restore(options.weight_source.as_ref())?;
    let metrics = options.metrics.unwrap_or(ArtifactMetrics {
        train_accuracy: checkpoint.train_accuracy,
        val_accuracy: checkpoint.val_accuracy,
    });
    export_handle(&model, metrics, out_dir, options)
}

/// Exports an in-memory model.
pub fn export_handle(
    model: &ModelHandle,
    metrics: ArtifactMetrics,
    out_dir: &Path,
    options: &ExportOptions,
) -> Result<ModelArtifact, PredictError> {
    let mut store = WeightStore::new();
    store.extend_prefixed(BACKBONE_PREFIX, model.backbone_weights());
    store.extend_prefixed(HEAD_PREFIX, &model.head.to_store());
    let blob = store.to_bytes()?;
    let metadata = ArtifactMetadata {
        schema_version: SCHEMA_VERSION,
        backbone_name: model.name(),
        class_map: class_map(),
        input_size: model.spec.input_size,
        rescale: options.rescale.unwrap_or(PreprocessConfig::default().rescale),
        created_at: options
            .created_at
            .clone()
            .unwrap_or_else(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
        metrics,
        content_hash: sha256_hex(&blob),
        spec: model.spec.clone(),
        head_spec: model.head_spec.clone(),
        backbone_origin: model.weights_origin().clone(),
    };
    metadata.validate()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(WEIGHTS_BLOB), &blob)?;
    std::fs::write(
        out_dir.join(METADATA_FILE),
        serde_json::to_string_pretty(&metadata).expect("metadata serializes"),
    )?;
    Ok(ModelArtifact {
        dir: out_dir.to_path_buf(),
        metadata,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Image,
    Frame,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: DiseaseClass,
    pub class_index: usize,
    pub probabilities: Vec<f64>,
    pub top1_confidence: f64,
    pub latency_ms: f64,
    /// Top-1 confidence fell below the predictor's confidence floor.
    pub uncertain: bool,
    pub input: InputKind,
}

impl Prediction {
    pub fn probability_map(&self) -> BTreeMap<String, f64> {
        class_names().into_iter().zip(self.probabilities.iter().copied()).collect()
    }
}

/// A loaded artifact. Immutable; share it across threads for inference.
#[derive(Debug)]
pub struct Predictor {
    model: ModelHandle,
    metadata: ArtifactMetadata,
    preprocess: PreprocessConfig,
    confidence_floor: f64,
}

/// Loads and verifies an artifact directory.
pub fn load_artifact(dir: &Path) -> Result<Predictor, PredictError> {
    let meta_path = dir.join(METADATA_FILE);
    let blob_path = dir.join(WEIGHTS_BLOB);
    for p in [&meta_path, &blob_path] {
        if !p.is_file() {
            return Err(PredictError::NotFound(p.clone()));
        }
    }
    let text = std::fs::read_to_string(&meta_path)?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| PredictError::Validation(format!("{METADATA_FILE}: {e}")))?;
    match raw.get("schema_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(found) => return Err(PredictError::Version { found }),
        None => return Err(PredictError::Validation("schema_version missing".into())),
    }
    let metadata: ArtifactMetadata =
        serde_json::from_value(raw).map_err(|e| PredictError::Validation(format!("{METADATA_FILE}: {e}")))?;
    metadata.validate()?;

    let blob = std::fs::read(&blob_path)?;
    let digest = sha256_hex(&blob);
    if digest != metadata.content_hash {
        return Err(PredictError::Integrity(format!(
            "{WEIGHTS_BLOB} hashes to {digest}, metadata records {}",
            metadata.content_hash
        )));
    }
    let store = WeightStore::from_bytes(&blob).map_err(|e| PredictError::Integrity(e.to_string()))?;
    let model = assemble_from_stores(
        &metadata.spec,
        &metadata.head_spec,
        store.strip_prefix(BACKBONE_PREFIX),
        metadata.backbone_origin.clone(),
        &store.strip_prefix(HEAD_PREFIX),
    )?;
    if model.num_classes() != NUM_CLASSES {
        return Err(PredictError::Validation(format!("head has {} outputs", model.num_classes())));
    }
    Ok(Predictor {
        preprocess: metadata.preprocess_config(),
        model,
        metadata,
        confidence_floor: DEFAULT_CONFIDENCE_FLOOR,
    })
}

impl Predictor {
    pub fn with_confidence_floor(mut self, floor: f64) -> Self {
        self.confidence_floor = floor;
        self
    }

    pub fn metadata(&self) -> &ArtifactMetadata {
        &self.metadata
    }

    pub fn model(&self) -> &ModelHandle {
        &self.model
    }

    pub fn confidence_floor(&self) -> f64 {
        self.confidence_floor
    }

    /// Class names ordered by index.
    pub fn class_names(&self) -> Vec<String> {
        class_names()
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        self.preprocess
    }

    /// Decodes and rescales exactly as the training pipeline does.
    pub fn preprocess(&self, bytes: &[u8]) -> Result<Tensor3, PredictError> {
        decode_and_rescale(bytes, &self.preprocess).map_err(|e| PredictError::Decode(e.to_string()))
    }

    pub fn predict(&self, bytes: &[u8]) -> Result<Prediction, PredictError> {
        self.run(bytes, InputKind::Image)
    }

    /// Same pipeline as [`Self::predict`], tagged as a video frame.
    pub fn predict_frame(&self, bytes: &[u8]) -> Result<Prediction, PredictError> {
        self.run(bytes, InputKind::Frame)
    }

    fn run(&self, bytes: &[u8], input: InputKind) -> Result<Prediction, PredictError> {
        let start = Instant::now();
        let x = self.preprocess(bytes)?;
        let probabilities = self.model.predict_proba(&x);
        Ok(self.finish(probabilities, start, input))
    }

    /// Classifies an already preprocessed tensor.
    pub fn predict_tensor(&self, x: &Tensor3) -> Prediction {
        let start = Instant::now();
        let probabilities = self.model.predict_proba(x);
        self.finish(probabilities, start, InputKind::Image)
    }

    fn finish(&self, probabilities: Vec<f64>, start: Instant, input: InputKind) -> Prediction {
        let class_index = argmax(&probabilities);
        let top1_confidence = probabilities[class_index];
        Prediction {
            label: DiseaseClass::from_index(class_index).expect("three-way head"),
            class_index,
            top1_confidence,
            uncertain: top1_confidence < self.confidence_floor,
            probabilities,
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
            input,
        }
    }
}
