//! Backbone registry, weight provisioning and model assembly.

use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbones::{build_backbone, Backbone, BackboneName, UnknownBackbone};
use crate::nn::{global_average_pool, StoreSource, SurrogateSource, WeightError, WeightStore};
use crate::seeding::{rng_for, tag};
use crate::tensor::Tensor3;

pub mod cache;
mod head;

pub use cache::SourceRecord;
pub use head::{
    cross_entropy_from_logits, softmax, Adam, Dense, DenseHead, HeadGradients, HeadSpec, HiddenActivation,
    OutputActivation, Pooling,
};

#[derive(Debug, Error)]
pub enum ZooError {
    #[error(transparent)]
    Registry(#[from] UnknownBackbone),
    #[error("weights for {backbone} unavailable: {reason}")]
    WeightsUnavailable { backbone: BackboneName, reason: String },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub name: BackboneName,
    pub input_size: usize,
    pub frozen: bool,
    pub pretrained_source: String,
    /// Apply the architecture's own ImageNet input normalization on top of
    /// the 1/255 rescale. Off in the reference recipe.
    #[serde(default)]
    pub canonical_preprocessing: bool,
}

impl BackboneSpec {
    pub fn new(name: BackboneName) -> Self {
        Self {
            name,
            input_size: name.default_input_size(),
            frozen: true,
            pretrained_source: "imagenet".to_string(),
            canonical_preprocessing: false,
        }
    }

    pub fn with_input_size(mut self, side: usize) -> Self {
        self.input_size = side;
        self
    }

    pub fn validate(&self) -> Result<(), ZooError> {
        if self.input_size < self.name.min_input_size() {
            return Err(ZooError::Config(format!(
                "{} needs input_size >= {}, got {}",
                self.name,
                self.name.min_input_size(),
                self.input_size
            )));
        }
        Ok(())
    }
}

/// All registered backbones in comparison-table order.
pub fn list_backbones() -> Vec<BackboneSpec> {
    BackboneName::ALL.into_iter().map(BackboneSpec::new).collect()
}

/// Registry lookup; only the ten registered names resolve.
pub fn lookup(name: &str) -> Result<BackboneSpec, ZooError> {
    Ok(BackboneSpec::new(BackboneName::from_str(name)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CategoricalCrossentropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStoppingConfig {
    pub monitor: String,
    pub patience: usize,
    pub min_delta: f64,
    pub restore_best: bool,
}

impl Default for EarlyStoppingConfig {
    fn default() -> Self {
        Self {
            monitor: "val_loss".to_string(),
            patience: 10,
            min_delta: 0.0,
            restore_best: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub loss: Loss,
    pub early_stopping: EarlyStoppingConfig,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 0.001,
            batch_size: 128,
            max_epochs: 100,
            loss: Loss::CategoricalCrossentropy,
            early_stopping: EarlyStoppingConfig::default(),
        }
    }
}

/// Where backbone parameters come from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    /// A cache directory laid out as `<dir>/<backbone>/weights.safetensors`.
    Cache(PathBuf),
    /// Seeded stand-in parameters generated in memory.
    Surrogate(u64),
}

impl Default for WeightSource {
    fn default() -> Self {
        WeightSource::Cache(cache::default_cache_dir())
    }
}

/// Backbone parameters plus where they came from.
pub fn load_backbone_weights(name: BackboneName, source: &WeightSource) -> Result<(WeightStore, SourceRecord), ZooError> {
    match source {
        WeightSource::Cache(dir) => cache::load_cached(dir, name),
        WeightSource::Surrogate(seed) => {
            let mut src = SurrogateSource::new(*seed);
            build_backbone(name, &mut src)?;
            let store = src.into_store();
            let record = SourceRecord {
                backbone: name.as_str().to_string(),
                origin: format!("surrogate(seed={seed})"),
                content_hash: store.content_hash()?,
                surrogate: true,
            };
            Ok((store, record))
        }
    }
}

/// A backbone with its classification head.
pub struct ModelHandle {
    pub spec: BackboneSpec,
    pub head_spec: HeadSpec,
    pub head: DenseHead,
    backbone: Box<dyn Backbone>,
    backbone_weights: WeightStore,
    weights_origin: SourceRecord,
    weight_source: Option<WeightSource>,
}

impl std::fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelHandle")
            .field("spec", &self.spec)
            .field("head_spec", &self.head_spec)
            .field("weights_origin", &self.weights_origin)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub trainable: usize,
    pub frozen: usize,
}

/// Builds `spec` with weights from the default cache and a head seeded
/// with the default seed.
pub fn build_model(spec: &BackboneSpec, head: &HeadSpec, num_classes: usize) -> Result<ModelHandle, ZooError> {
    build_model_with(spec, head, num_classes, &WeightSource::default(), crate::data_pipeline::DEFAULT_SEED)
}

pub fn build_model_with(
    spec: &BackboneSpec,
    head: &HeadSpec,
    num_classes: usize,
    source: &WeightSource,
    head_seed: u64,
) -> Result<ModelHandle, ZooError> {
    spec.validate()?;
    if num_classes < 2 {
        return Err(ZooError::Config(format!("num_classes must be >= 2, got {num_classes}")));
    }
    if !(0.0..1.0).contains(&head.dropout_rate) {
        return Err(ZooError::Config(format!("dropout_rate must lie in [0, 1), got {}", head.dropout_rate)));
    }
    if head.hidden_units == Some(0) {
        return Err(ZooError::Config("hidden_units must be >= 1".into()));
    }
    let (store, origin) = load_backbone_weights(spec.name, source)?;
    let mut model = assemble(spec, head, num_classes, store, origin, None, head_seed)?;
    model.weight_source = Some(source.clone());
    Ok(model)
}

/// Reassembles a model from stored backbone and head parameters.
pub fn assemble_from_stores(
    spec: &BackboneSpec,
    head_spec: &HeadSpec,
    backbone_weights: WeightStore,
    origin: SourceRecord,
    head_weights: &WeightStore,
) -> Result<ModelHandle, ZooError> {
    spec.validate()?;
    let head = DenseHead::from_store(head_weights, head_spec.dropout_rate)?;
    let classes = head.num_classes();
    assemble(spec, head_spec, classes, backbone_weights, origin, Some(head), 0)
}

fn assemble(
    spec: &BackboneSpec,
    head_spec: &HeadSpec,
    num_classes: usize,
    store: WeightStore,
    origin: SourceRecord,
    head: Option<DenseHead>,
    head_seed: u64,
) -> Result<ModelHandle, ZooError> {
    let name = spec.name;
    let unavailable = |e: WeightError| ZooError::WeightsUnavailable {
        backbone: name,
        reason: e.to_string(),
    };
    let mut src = StoreSource::new(&store);
    let backbone = build_backbone(name, &mut src).map_err(unavailable)?;
    src.finish().map_err(unavailable)?;
    let head_spec = HeadSpec {
        output_units: num_classes,
        ..head_spec.clone()
    };
    let head = match head {
        Some(h) => {
            if h.feature_width() != backbone.feature_width() {
                return Err(ZooError::Config(format!(
                    "head expects {} features but {name} produces {}",
                    h.feature_width(),
                    backbone.feature_width()
                )));
            }
            h
        }
        None => DenseHead::new(
            &head_spec,
            backbone.feature_width(),
            &mut rng_for(head_seed, &[tag::HEAD_INIT]),
        ),
    };
    Ok(ModelHandle {
        spec: spec.clone(),
        head_spec,
        head,
        backbone,
        backbone_weights: store,
        weights_origin: origin,
        weight_source: None,
    })
}

impl ModelHandle {
    pub fn name(&self) -> BackboneName {
        self.spec.name
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn feature_width(&self) -> usize {
        self.backbone.feature_width()
    }

    pub fn backbone_weights(&self) -> &WeightStore {
        &self.backbone_weights
    }

    pub fn weights_origin(&self) -> &SourceRecord {
        &self.weights_origin
    }

    /// The source the backbone was loaded from, when it was not restored
    /// from an exported artifact.
    pub fn weight_source(&self) -> Option<&WeightSource> {
        self.weight_source.as_ref()
    }

    /// Replaces the head with a fresh initialization drawn from `seed`.
    pub fn reset_head(&mut self, seed: u64) {
        self.head = DenseHead::new(&self.head_spec, self.feature_width(), &mut rng_for(seed, &[tag::HEAD_INIT]));
    }

    /// Pooled backbone features for one rescaled image.
    pub fn features(&self, image: &Tensor3) -> Vec<f64> {
        let pooled = if self.spec.canonical_preprocessing {
            let mut x = image.clone();
            canonical_preprocess(self.spec.name, &mut x);
            global_average_pool(&self.backbone.forward(&x))
        } else {
            global_average_pool(&self.backbone.forward(image))
        };
        pooled.into_iter().map(f64::from).collect()
    }

    /// [`Self::features`] over a batch, in parallel.
    pub fn features_batch(&self, images: &[Tensor3]) -> Vec<Vec<f64>> {
        images.par_iter().map(|x| self.features(x)).collect()
    }

    /// Inference-mode class probabilities for one image.
    pub fn predict_proba(&self, image: &Tensor3) -> Vec<f64> {
        self.head.predict(&self.features(image))
    }

    pub fn predict_proba_batch(&self, images: &[Tensor3]) -> Vec<Vec<f64>> {
        images.par_iter().map(|x| self.predict_proba(x)).collect()
    }
}

/// Keras marks these variables trainable; moving and normalization
/// statistics never are.
fn is_trainable_variable(name: &str) -> bool {
    let var = name.rsplit('/').next().unwrap_or(name);
    matches!(
        var,
        "kernel" | "bias" | "gamma" | "beta" | "depthwise_kernel" | "pointwise_kernel"
    )
}

/// Exact parameter tallies by trainability.
pub fn count_parameters(model: &ModelHandle) -> ParameterCount {
    let mut count = ParameterCount {
        trainable: model.head.param_count(),
        frozen: 0,
    };
    for (name, t) in model.backbone_weights.iter() {
        if !model.spec.frozen && is_trainable_variable(name) {
            count.trainable += t.data.len();
        } else {
            count.frozen += t.data.len();
        }
    }
    count
}

/// Per-architecture ImageNet normalization applied to a `[0, 1]` image.
pub fn canonical_preprocess(name: BackboneName, x: &mut Tensor3) {
    use BackboneName::*;
    match name {
        // BGR, 0..255, mean-centred.
        Resnet50 | Resnet101 | Vgg16 | Vgg19 => {
            const MEAN_BGR: [f32; 3] = [103.939, 116.779, 123.68];
            for px in x.data_mut().chunks_exact_mut(3) {
                let (r, g, b) = (px[0] * 255.0, px[1] * 255.0, px[2] * 255.0);
                px[0] = b - MEAN_BGR[0];
                px[1] = g - MEAN_BGR[1];
                px[2] = r - MEAN_BGR[2];
            }
        }
        Densenet121 | Densenet169 => {
            const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
            const STD: [f32; 3] = [0.229, 0.224, 0.225];
            for px in x.data_mut().chunks_exact_mut(3) {
                for c in 0..3 {
                    px[c] = (px[c] - MEAN[c]) / STD[c];
                }
            }
        }
        Mobilenetv2 | Inceptionv3 | Nasnet => x.map_inplace(|v| v * 2.0 - 1.0),
        // The network normalizes internally and expects 0..255.
        Efficientnetb0 => x.map_inplace(|v| v * 255.0),
    }
}
