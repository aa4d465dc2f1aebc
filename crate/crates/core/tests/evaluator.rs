mod common;

use std::collections::BTreeSet;

use paddydoc::backbones::BackboneName;
use paddydoc::data_pipeline::Split;
use paddydoc::evaluator::{
    compare, diagnose, evaluate, panel_ranges, parse_comparison_json, plot_history, render_comparison, ComparisonRow,
    DiagnosticThresholds, EvalError, EvalReport, Flag, ReportFormat, Scorer,
};
use paddydoc::model_zoo::HyperParams;
use paddydoc::tensor::Tensor3;
use paddydoc::trainer::{EpochRecord, TrainingHistory};
use proptest::prelude::*;
use serde::Deserialize;

/// Published (model, train accuracy, validation accuracy) triples.
const PUBLISHED_ACCURACIES: [(&str, f64, f64); 10] = [
    ("ResNet-50", 0.87, 0.75),
    ("DenseNet121", 1.00, 0.90),
    ("VGG16", 0.76, 0.84),
    ("MobileNetV2", 0.94, 0.9583),
    ("Inception V3", 0.96, 0.86),
    ("EfficientNetB0", 0.33, 0.33),
    ("ResNet-101", 0.58, 0.54),
    ("VGG19", 0.98, 0.70),
    ("NasNet", 1.00, 0.80),
    ("DenseNet169", 1.00, 0.91),
];

fn table_rows() -> Vec<ComparisonRow> {
    let t = DiagnosticThresholds::default();
    PUBLISHED_ACCURACIES.iter().map(|(n, tr, va)| ComparisonRow::new(n, *tr, *va, &t)).collect()
}

#[derive(Deserialize)]
struct Tally {
    labels: Vec<usize>,
    probabilities: Vec<Vec<f64>>,
    expected: Expected,
}

#[derive(Deserialize)]
struct Expected {
    correct: u64,
    accuracy: f64,
    confusion: [[u64; 3]; 3],
    loss: f64,
    precision: [f64; 3],
    recall: [f64; 3],
}

#[test]
fn twelve_sample_fixture_matches_independent_tally() {
    let t: Tally = serde_json::from_str(include_str!("fixtures/eval_tally.json")).unwrap();
    let r = EvalReport::from_predictions("fixture", Split::Val, &t.probabilities, &t.labels).unwrap();
    assert_eq!(r.n_samples, 12);
    assert_eq!(r.confusion, t.expected.confusion);
    assert_eq!(r.accuracy, t.expected.accuracy);
    assert_eq!((0..3).map(|k| r.confusion[k][k]).sum::<u64>(), t.expected.correct);
    assert!((r.loss - t.expected.loss).abs() < 1e-12);
    for k in 0..3 {
        assert!((r.per_class_precision[k] - t.expected.precision[k]).abs() < 1e-15);
        assert!((r.per_class_recall[k] - t.expected.recall[k]).abs() < 1e-15);
    }
}

struct Constant(usize);

impl Scorer for Constant {
    fn backbone_name(&self) -> String {
        "constant".into()
    }
    fn score(&self, images: &[Tensor3]) -> Vec<Vec<f64>> {
        images
            .iter()
            .map(|_| {
                let mut p = vec![0.0; 3];
                p[self.0] = 1.0;
                p
            })
            .collect()
    }
}

/// Knows the colour coding of the solid-colour fixture.
struct BrightestChannel;

impl Scorer for BrightestChannel {
    fn backbone_name(&self) -> String {
        "oracle".into()
    }
    fn score(&self, images: &[Tensor3]) -> Vec<Vec<f64>> {
        images
            .iter()
            .map(|x| {
                let mut sums = vec![0.0f64; 3];
                for px in x.data().chunks_exact(3) {
                    for c in 0..3 {
                        sums[c] += f64::from(px[c]);
                    }
                }
                let total: f64 = sums.iter().sum();
                sums.into_iter().map(|s| s / total).collect()
            })
            .collect()
    }
}

#[test]
fn constant_predictor_scores_chance_on_balanced_val() {
    let (_, val) = common::solid_color_streams(8, 1, 10, 1);
    let r = evaluate(&Constant(0), &val).unwrap();
    assert_eq!(r.accuracy, 1.0 / 3.0);
    assert_eq!((0..3).map(|t| r.confusion[t][0]).sum::<u64>(), 30);
    assert_eq!(r.split, Split::Val);
}

#[test]
fn oracle_predictor_is_perfect() {
    let (train, _) = common::solid_color_streams(8, 7, 1, 1);
    let r = evaluate(&BrightestChannel, &train).unwrap();
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.per_class_recall, [1.0; 3]);
    for t in 0..3 {
        assert_eq!(r.confusion[t].iter().sum::<u64>(), 7);
        assert_eq!(r.confusion[t][t], 7);
    }
}

#[test]
fn published_pairs_flag_the_reported_pathologies() {
    let t = DiagnosticThresholds::default();
    let overfit: BTreeSet<&str> = PUBLISHED_ACCURACIES
        .iter()
        .filter(|(_, tr, va)| diagnose(*tr, *va, &t).contains(&Flag::Overfit))
        .map(|(n, _, _)| *n)
        .collect();
    let low: BTreeSet<&str> = PUBLISHED_ACCURACIES
        .iter()
        .filter(|(_, tr, va)| diagnose(*tr, *va, &t).contains(&Flag::LowPerformance))
        .map(|(n, _, _)| *n)
        .collect();
    assert_eq!(overfit, BTreeSet::from(["VGG19", "NasNet"]));
    assert_eq!(low, BTreeSet::from(["EfficientNetB0", "ResNet-101"]));
    assert_eq!(diagnose(1.00, 0.80, &t), BTreeSet::from([Flag::Overfit]));
    assert_eq!(diagnose(0.58, 0.54, &t), BTreeSet::from([Flag::LowPerformance]));
}

#[test]
fn mobilenet_row_from_reports() {
    let t = DiagnosticThresholds::default();
    // 47/50 and 23/24 reproduce the published 94% and 95.83%.
    let report = |split, correct: usize, n: usize| {
        let labels = vec![0usize; n];
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|i| if i < correct { vec![1.0, 0.0, 0.0] } else { vec![0.0, 1.0, 0.0] })
            .collect();
        EvalReport::from_predictions("MobileNetV2", split, &probs, &labels).unwrap()
    };
    let rows = compare(&[report(Split::Train, 47, 50), report(Split::Val, 23, 24)], &t).unwrap();
    assert_eq!(rows.len(), 1);
    assert!((rows[0].train_accuracy - 0.94).abs() < 1e-12);
    assert!((rows[0].val_accuracy - 0.9583).abs() < 1e-4);
    assert!((rows[0].gap - -0.0183).abs() < 1e-4);
    assert!(rows[0].flags.is_empty());
    assert_eq!(rows[0].gap, rows[0].train_accuracy - rows[0].val_accuracy);
}

#[test]
fn published_rows_have_expected_flags() {
    let rows = table_rows();
    let by_name = |n: &str| rows.iter().find(|r| r.backbone_name == n).unwrap().clone();
    assert!(by_name("VGG19").flags.contains(&Flag::Overfit));
    assert!(by_name("EfficientNetB0").flags.contains(&Flag::LowPerformance));
    assert!(by_name("MobileNetV2").flags.is_empty());
    assert!((by_name("MobileNetV2").gap - -0.0183).abs() < 1e-12);
}

#[test]
fn csv_has_header_and_one_line_per_row() {
    let text = render_comparison(&table_rows(), ReportFormat::Csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11);
    assert_eq!(lines[0], "backbone,train_accuracy,val_accuracy,gap,flags");
    assert!(lines.iter().any(|l| l.starts_with("VGG19,") && l.ends_with(",overfit")));
    let both = ComparisonRow::new("x", 0.9, 0.5, &DiagnosticThresholds::default());
    let line = render_comparison(&[both], ReportFormat::Csv).unwrap();
    assert!(line.lines().nth(1).unwrap().ends_with(",overfit;low_performance"));
}

#[test]
fn markdown_mirrors_the_table() {
    let text = render_comparison(&table_rows(), ReportFormat::Markdown).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 12);
    assert!(lines[0].starts_with("| Model used | Training accuracy | Validation accuracy |"));
    assert!(lines.contains(&"| MobileNetV2 | 94% | 95.83% | -0.0183 |  |"));
}

#[test]
fn rendering_is_deterministic_and_json_round_trips() {
    let rows = table_rows();
    for f in [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json] {
        assert_eq!(render_comparison(&rows, f).unwrap(), render_comparison(&rows, f).unwrap());
    }
    let json = render_comparison(&rows, ReportFormat::Json).unwrap();
    assert_eq!(parse_comparison_json(&json).unwrap(), rows);
    assert!(matches!(render_comparison(&[], ReportFormat::Csv), Err(EvalError::Config(_))));
}

fn history(n: usize) -> TrainingHistory {
    // Rising accuracy from about 0.5 and falling loss, as in the reference plot.
    let records = (1..=n)
        .map(|e| {
            let t = (e - 1) as f64 / 8.0;
            EpochRecord {
                epoch: e,
                train_accuracy: 0.5 + 0.4 * t,
                train_loss: 80.0 * (1.0 - t),
                val_accuracy: 0.5 + 0.35 * t,
                val_loss: 80.0 - 60.0 * t,
            }
        })
        .collect();
    TrainingHistory {
        backbone_name: BackboneName::Densenet121,
        seed: 42,
        hparams: HyperParams::default(),
        records,
        stopped_epoch: n,
        best_epoch: n,
        wall_time_s: 1.0,
    }
}

fn coloured_pixels(img: &image::RgbImage, x0: u32, x1: u32, rgb: [u8; 3]) -> usize {
    img.enumerate_pixels()
        .filter(|(x, _, p)| (x0..x1).contains(x) && p.0 == rgb)
        .count()
}

#[test]
fn nine_epoch_plot_has_both_series_in_both_panels() {
    let h = history(9);
    let ranges = panel_ranges(&h);
    assert!(ranges.accuracy.start <= 0.5 && ranges.accuracy.end >= 1.0);
    assert!(ranges.loss.end >= 80.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history_densenet121_42.png");
    plot_history(&h, &path).unwrap();
    let img = image::open(&path).unwrap().to_rgb8();
    let w = img.width();
    for (x0, x1) in [(0, w / 2), (w / 2, w)] {
        assert!(coloured_pixels(&img, x0, x1, [0, 0, 255]) > 50, "training series missing");
        assert!(coloured_pixels(&img, x0, x1, [0, 255, 0]) > 50, "validation series missing");
    }
}

#[test]
fn single_epoch_plot_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.png");
    plot_history(&history(1), &path).unwrap();
    assert!(image::open(&path).is_ok());
}

#[test]
fn empty_history_cannot_be_plotted() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(plot_history(&history(0), &dir.path().join("x.png")), Err(EvalError::Plot(_))));
}

proptest! {
    #[test]
    fn accuracy_equals_brute_force_match_count(
        samples in proptest::collection::vec((0usize..3, proptest::collection::vec(0.0f64..1.0, 3)), 1..100),
    ) {
        let labels: Vec<usize> = samples.iter().map(|s| s.0).collect();
        let probs: Vec<Vec<f64>> = samples.iter().map(|s| s.1.clone()).collect();
        let r = EvalReport::from_predictions("p", Split::Val, &probs, &labels).unwrap();
        let mut matches = 0usize;
        let mut per_class = [0u64; 3];
        for (p, &y) in probs.iter().zip(&labels) {
            let mut best = 0;
            for k in 1..3 {
                if p[k] > p[best] { best = k; }
            }
            if best == y { matches += 1; }
            per_class[y] += 1;
        }
        prop_assert_eq!(r.accuracy, matches as f64 / labels.len() as f64);
        let total: u64 = r.confusion.iter().flatten().sum();
        prop_assert_eq!(total as usize, r.n_samples);
        for k in 0..3 {
            prop_assert_eq!(r.confusion[k].iter().sum::<u64>(), per_class[k]);
            if r.precision_defined[k] { prop_assert!((0.0..=1.0).contains(&r.per_class_precision[k])); }
            if r.recall_defined[k] { prop_assert!((0.0..=1.0).contains(&r.per_class_recall[k])); }
        }
    }
}
