//! Pooled backbone features checked against Keras on identical weights.
//!
//! The fixture was produced by `tools/keras_reference.py reference` from the
//! surrogate parameters for seed 7: every backbone was loaded into its
//! `keras.applications` counterpart and run on the probe image below.

use paddydoc::backbones::{build_backbone, BackboneName};
use paddydoc::nn::SurrogateSource;
use paddydoc::tensor::Tensor3;
use serde::Deserialize;
use std::collections::BTreeMap;

#[derive(Deserialize)]
struct Reference {
    input_size: usize,
    seed: u64,
    pooled: Vec<f64>,
}

fn probe(size: usize, scale: f32) -> Tensor3 {
    Tensor3::from_fn(size, size, 3, |y, x, c| {
        scale * (0.5 + 0.5 * (0.37 * y as f32 + 0.23 * x as f32 + 1.1 * c as f32).sin())
    })
}

#[test]
fn pooled_features_match_keras() {
    let text = include_str!("fixtures/keras_pooled_features.json");
    let refs: BTreeMap<String, Reference> = serde_json::from_str(text).unwrap();
    assert_eq!(refs.len(), 10);
    for (key, r) in refs {
        let name: BackboneName = key.parse().unwrap();
        let mut src = SurrogateSource::new(r.seed);
        let net = build_backbone(name, &mut src).unwrap();
        // EfficientNet rescales by 1/255 internally, so it is probed in raw pixel units.
        let scale = if name == BackboneName::Efficientnetb0 { 255.0 } else { 1.0 };
        let pooled = net.forward(&probe(r.input_size, scale)).global_average();
        assert_eq!(pooled.len(), r.pooled.len(), "{name}");
        let peak = r.pooled.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let worst = pooled
            .iter()
            .zip(&r.pooled)
            .fold(0.0f64, |m, (a, b)| m.max((*a as f64 - b).abs()));
        assert!(worst / peak <= 1e-4, "{name}: relative deviation {}", worst / peak);
    }
}
