mod common;

use paddydoc::backbones::BackboneName;
use paddydoc::data_pipeline::{assign_splits, scan_dataset};
use paddydoc::evaluator::evaluate;
use paddydoc::model_zoo::{
    build_model_with, cache, BackboneSpec, EarlyStoppingConfig, HeadSpec, HyperParams, ModelHandle, WeightSource,
};
use paddydoc::trainer::{load_checkpoint, run_dir, run_sweep, train, SweepConfig, TrainError, TrainingHistory};

const SIDE: usize = 32;

fn mobilenet() -> ModelHandle {
    let spec = BackboneSpec::new(BackboneName::Mobilenetv2).with_input_size(SIDE);
    build_model_with(&spec, &HeadSpec::default(), 3, &WeightSource::Surrogate(5), 0).unwrap()
}

/// Surrogate VGG16 keeps solid colours far apart in feature space; the
/// surrogate MobileNetV2 compresses them to nearly one point.
fn vgg16() -> ModelHandle {
    let spec = BackboneSpec::new(BackboneName::Vgg16).with_input_size(SIDE);
    build_model_with(&spec, &HeadSpec::default(), 3, &WeightSource::Surrogate(5), 0).unwrap()
}

fn recipe(max_epochs: usize) -> HyperParams {
    HyperParams {
        max_epochs,
        early_stopping: EarlyStoppingConfig {
            patience: 1000,
            ..EarlyStoppingConfig::default()
        },
        ..HyperParams::default()
    }
}

#[test]
fn separable_colours_are_learned_within_thirty_epochs() {
    let (tr, va) = common::solid_color_streams(SIDE, 30, 10, 42);
    let mut model = vgg16();
    let (history, checkpoint) = train(&mut model, &tr, &va, &recipe(30), 42, None).unwrap();
    assert_eq!(history.records.len(), 30);
    let last = history.records.last().unwrap();
    assert!(last.train_accuracy >= 0.95, "final train accuracy {}", last.train_accuracy);
    let first = &history.records[0];
    let best = history.best().unwrap();
    assert!(best.train_loss < first.train_loss);
    assert_eq!(checkpoint.epoch, history.best_epoch);
    for (i, r) in history.records.iter().enumerate() {
        assert_eq!(r.epoch, i + 1);
        assert!((0.0..=1.0).contains(&r.train_accuracy) && (0.0..=1.0).contains(&r.val_accuracy));
        assert!(r.train_loss >= 0.0 && r.val_loss >= 0.0);
    }
    // The best epoch minimizes the monitored quantity.
    let min = history.records.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(best.val_loss, min);
}

#[test]
fn zero_epochs_checkpoint_the_initial_head() {
    let (tr, va) = common::solid_color_streams(SIDE, 4, 2, 1);
    let mut model = mobilenet();
    let (history, checkpoint) = train(&mut model, &tr, &va, &recipe(0), 9, None).unwrap();
    assert!(history.records.is_empty());
    assert_eq!((history.stopped_epoch, history.best_epoch, checkpoint.epoch), (0, 0, 0));
    let mut fresh = mobilenet();
    fresh.reset_head(9);
    assert_eq!(checkpoint.head, fresh.head);
    assert!(checkpoint.monitored_value.is_finite());
}

#[test]
fn identical_seeds_give_identical_histories() {
    let (tr, va) = common::solid_color_streams(SIDE, 6, 3, 3);
    let run = || {
        let mut model = mobilenet();
        train(&mut model, &tr, &va, &recipe(5), 7, None).unwrap().0.records
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_reload_reproduces_the_recorded_score() {
    let (tr, va) = common::solid_color_streams(SIDE, 8, 4, 2);
    let runs = tempfile::tempdir().unwrap();
    let mut model = mobilenet();
    let (history, checkpoint) = train(&mut model, &tr, &va, &recipe(6), 11, Some(runs.path())).unwrap();
    let dir = run_dir(runs.path(), BackboneName::Mobilenetv2, 11);
    let saved = TrainingHistory::load(&dir.join("history_mobilenetv2_11.json")).unwrap();
    assert_eq!(saved.records, history.records);

    let loaded = load_checkpoint(&dir.join("best")).unwrap();
    assert_eq!(loaded.head, checkpoint.head);
    let restored = loaded.restore(None).unwrap();
    let report = evaluate(&restored, &va).unwrap();
    assert!((report.accuracy - loaded.val_accuracy).abs() < 1e-5);
    assert!((report.loss - loaded.monitored_value).abs() < 1e-5);
    assert!((report.accuracy - history.best().unwrap().val_accuracy).abs() < 1e-5);
}

#[test]
fn history_file_has_the_documented_keys() {
    let (tr, va) = common::solid_color_streams(SIDE, 3, 2, 2);
    let runs = tempfile::tempdir().unwrap();
    let mut model = mobilenet();
    train(&mut model, &tr, &va, &recipe(2), 4, Some(runs.path())).unwrap();
    let path = run_dir(runs.path(), BackboneName::Mobilenetv2, 4).join("history_mobilenetv2_4.json");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["backbone", "best_epoch", "hparams", "records", "seed", "stopped_epoch", "wall_time_s"]);
    assert_eq!(v["backbone"], "mobilenetv2");
    let mut rec: Vec<&str> = v["records"][0].as_object().unwrap().keys().map(String::as_str).collect();
    rec.sort();
    assert_eq!(rec, ["epoch", "train_accuracy", "train_loss", "val_accuracy", "val_loss"]);
}

#[test]
fn training_never_touches_the_backbone() {
    let (tr, va) = common::solid_color_streams(SIDE, 4, 2, 2);
    let mut model = mobilenet();
    let weights_before = model.backbone_weights().clone();
    let probe = va.base_tensors()[0].clone();
    let features_before = model.features(&probe);
    model.reset_head(3);
    let head_before = model.head.clone();
    train(&mut model, &tr, &va, &recipe(1), 3, None).unwrap();
    assert_eq!(model.backbone_weights(), &weights_before);
    assert_eq!(model.features(&probe), features_before);
    let moved = head_before
        .output
        .kernel
        .iter()
        .zip(&model.head.output.kernel)
        .filter(|(a, b)| a != b)
        .count();
    assert!(moved > 0);
}

#[test]
fn huge_learning_rate_diverges() {
    let (tr, va) = common::solid_color_streams(SIDE, 4, 2, 2);
    let mut model = mobilenet();
    let hp = HyperParams {
        learning_rate: 1e308,
        ..recipe(5)
    };
    match train(&mut model, &tr, &va, &hp, 1, None) {
        Err(TrainError::Diverged { epoch }) => assert!(epoch <= 2),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn stalled_metric_stops_early() {
    let (tr, va) = common::solid_color_streams(SIDE, 4, 2, 2);
    let mut model = mobilenet();
    let hp = HyperParams {
        learning_rate: 1e-12,
        max_epochs: 50,
        early_stopping: EarlyStoppingConfig {
            monitor: "val_accuracy".into(),
            patience: 2,
            min_delta: 0.0,
            restore_best: true,
        },
        ..HyperParams::default()
    };
    let (history, _) = train(&mut model, &tr, &va, &hp, 1, None).unwrap();
    assert_eq!(history.stopped_epoch, 3);
    assert_eq!(history.best_epoch, 1);
}

#[test]
fn bad_configuration_is_rejected() {
    let (tr, va) = common::solid_color_streams(SIDE, 2, 1, 2);
    let mut model = mobilenet();
    let mut hp = recipe(1);
    hp.early_stopping.monitor = "val_f1".into();
    assert!(matches!(train(&mut model, &tr, &va, &hp, 1, None), Err(TrainError::Config(_))));
    let spec = BackboneSpec {
        frozen: false,
        ..BackboneSpec::new(BackboneName::Vgg16).with_input_size(SIDE)
    };
    let mut open = build_model_with(&spec, &HeadSpec::default(), 3, &WeightSource::Surrogate(1), 0).unwrap();
    assert!(matches!(train(&mut open, &tr, &va, &recipe(1), 1, None), Err(TrainError::Config(_))));
}

#[test]
fn empty_sweep_is_empty() {
    let data = tempfile::tempdir().unwrap();
    common::write_corpus(data.path(), 2, 24, false);
    let manifest = assign_splits(&scan_dataset(data.path()).unwrap(), 0.5, 0.0, 42).unwrap();
    let report = run_sweep(&[], &manifest, &recipe(1), &[1], &SweepConfig::default());
    assert!(report.entries.is_empty() && report.failures.is_empty() && report.comparison.is_empty());
}

#[test]
fn sweep_isolates_a_backbone_without_weights() {
    let data = tempfile::tempdir().unwrap();
    common::write_corpus(data.path(), 4, 40, false);
    let manifest = assign_splits(&scan_dataset(data.path()).unwrap(), 0.25, 0.0, 42).unwrap();
    let weights = tempfile::tempdir().unwrap();
    for name in [BackboneName::Mobilenetv2, BackboneName::Vgg16] {
        cache::write_surrogate_entry(weights.path(), name, 2).unwrap();
    }
    let runs = tempfile::tempdir().unwrap();
    let config = SweepConfig {
        runs_dir: Some(runs.path().to_path_buf()),
        weight_source: WeightSource::Cache(weights.path().to_path_buf()),
        input_size: Some(SIDE),
        ..SweepConfig::default()
    };
    let names = [BackboneName::Vgg16, BackboneName::Efficientnetb0, BackboneName::Mobilenetv2];
    let report = run_sweep(&names, &manifest, &recipe(2), &[1], &config);
    let done: Vec<BackboneName> = report.entries.iter().map(|e| e.backbone).collect();
    assert_eq!(done, [BackboneName::Vgg16, BackboneName::Mobilenetv2]);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].backbone, BackboneName::Efficientnetb0);
    assert!(report.failures[0].error.contains("efficientnetb0"));
    assert_eq!(report.comparison.len(), 2);
    for name in ["vgg16", "mobilenetv2"] {
        let dir = runs.path().join(name).join("1");
        assert!(dir.join(format!("history_{name}_1.json")).exists());
        assert!(dir.join(format!("history_{name}_1.png")).exists());
        assert!(dir.join("best").join("checkpoint.json").exists());
        assert!(dir.join("eval_val.json").exists());
    }
    for ext in ["md", "csv", "json"] {
        assert!(runs.path().join(format!("comparison.{ext}")).exists());
    }
    // Every backbone saw the same split.
    let val_sizes: Vec<usize> = report.entries.iter().map(|e| e.val_report.n_samples).collect();
    assert_eq!(val_sizes, [3, 3]);
}
