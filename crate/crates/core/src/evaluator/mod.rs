//! Metrics, the cross-backbone comparison table and training diagnostics.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::NUM_CLASSES;
use crate::data_pipeline::{BatchStream, Split};
use crate::model_zoo::ModelHandle;
use crate::tensor::Tensor3;

mod plot;

pub use plot::{panel_ranges, plot_history, PanelRanges};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot evaluate an empty stream")]
    EmptyStream,
    #[error("comparison for {backbone} is missing its {split} report")]
    MissingSplit { backbone: String, split: Split },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("plot failed: {0}")]
    Plot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that maps rescaled images to class probabilities.
pub trait Scorer: Sync {
    fn backbone_name(&self) -> String;
    fn score(&self, images: &[Tensor3]) -> Vec<Vec<f64>>;
}

impl Scorer for ModelHandle {
    fn backbone_name(&self) -> String {
        self.name().to_string()
    }

    fn score(&self, images: &[Tensor3]) -> Vec<Vec<f64>> {
        self.predict_proba_batch(images)
    }
}

/// Probability floor used when scoring, as in Keras' categorical cross-entropy.
pub const PROBABILITY_EPSILON: f64 = 1e-7;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub backbone_name: String,
    pub split: Split,
    pub accuracy: f64,
    /// Mean categorical cross-entropy with probabilities clipped to
    /// `[1e-7, 1 - 1e-7]`.
    pub loss: f64,
    /// Rows are true classes, columns predicted classes.
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
    /// Zero where undefined; see `precision_defined`.
    pub per_class_precision: [f64; NUM_CLASSES],
    pub per_class_recall: [f64; NUM_CLASSES],
    pub precision_defined: [bool; NUM_CLASSES],
    pub recall_defined: [bool; NUM_CLASSES],
    pub n_samples: usize,
}

impl EvalReport {
    /// Builds a report from per-sample probability vectors and true class
    /// indices.
    pub fn from_predictions(
        backbone_name: &str,
        split: Split,
        probabilities: &[Vec<f64>],
        labels: &[usize],
    ) -> Result<Self, EvalError> {
        if probabilities.is_empty() {
            return Err(EvalError::EmptyStream);
        }
        if probabilities.len() != labels.len() {
            return Err(EvalError::Config(format!(
                "{} predictions for {} labels",
                probabilities.len(),
                labels.len()
            )));
        }
        let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
        let mut loss = 0.0;
        for (p, &y) in probabilities.iter().zip(labels) {
            if p.len() != NUM_CLASSES || y >= NUM_CLASSES {
                return Err(EvalError::Config(format!(
                    "expected {NUM_CLASSES}-way probabilities and labels"
                )));
            }
            confusion[y][argmax(p)] += 1;
            loss -= p[y].clamp(PROBABILITY_EPSILON, 1.0 - PROBABILITY_EPSILON).ln();
        }
        let n = labels.len();
        let correct: u64 = (0..NUM_CLASSES).map(|k| confusion[k][k]).sum();
        let mut report = Self {
            backbone_name: backbone_name.to_string(),
            split,
            accuracy: correct as f64 / n as f64,
            loss: loss / n as f64,
            confusion,
            per_class_precision: [0.0; NUM_CLASSES],
            per_class_recall: [0.0; NUM_CLASSES],
            precision_defined: [false; NUM_CLASSES],
            recall_defined: [false; NUM_CLASSES],
            n_samples: n,
        };
        for k in 0..NUM_CLASSES {
            let predicted: u64 = (0..NUM_CLASSES).map(|t| confusion[t][k]).sum();
            let actual: u64 = confusion[k].iter().sum();
            if predicted > 0 {
                report.precision_defined[k] = true;
                report.per_class_precision[k] = confusion[k][k] as f64 / predicted as f64;
            }
            if actual > 0 {
                report.recall_defined[k] = true;
                report.per_class_recall[k] = confusion[k][k] as f64 / actual as f64;
            }
        }
        Ok(report)
    }
}

/// Scores every record of `stream` once, without augmentation.
pub fn evaluate(scorer: &dyn Scorer, stream: &BatchStream) -> Result<EvalReport, EvalError> {
    if stream.is_empty() {
        return Err(EvalError::EmptyStream);
    }
    let labels: Vec<usize> = stream.records().iter().map(|r| r.class_index).collect();
    let probabilities = scorer.score(stream.base_tensors());
    EvalReport::from_predictions(&scorer.backbone_name(), stream.split(), &probabilities, &labels)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    Overfit,
    LowPerformance,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::Overfit => "overfit",
            Flag::LowPerformance => "low_performance",
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticThresholds {
    pub overfit_gap_min: f64,
    pub low_perf_val_max: f64,
    pub chance_level: f64,
}

impl Default for DiagnosticThresholds {
    fn default() -> Self {
        Self {
            overfit_gap_min: 0.15,
            low_perf_val_max: 0.60,
            chance_level: 1.0 / NUM_CLASSES as f64,
        }
    }
}

impl DiagnosticThresholds {
    pub fn validate(&self) -> Result<(), EvalError> {
        let ok = 0.0 < self.chance_level
            && self.chance_level < self.low_perf_val_max
            && self.low_perf_val_max < 1.0
            && self.overfit_gap_min > 0.0;
        if ok {
            Ok(())
        } else {
            Err(EvalError::Config(format!("inconsistent thresholds {self:?}")))
        }
    }
}

pub fn diagnose(train_accuracy: f64, val_accuracy: f64, thresholds: &DiagnosticThresholds) -> BTreeSet<Flag> {
    let mut flags = BTreeSet::new();
    if train_accuracy - val_accuracy >= thresholds.overfit_gap_min {
        flags.insert(Flag::Overfit);
    }
    if val_accuracy <= thresholds.low_perf_val_max {
        flags.insert(Flag::LowPerformance);
    }
    flags
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub backbone_name: String,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub gap: f64,
    pub flags: BTreeSet<Flag>,
}

impl ComparisonRow {
    pub fn new(backbone_name: &str, train_accuracy: f64, val_accuracy: f64, thresholds: &DiagnosticThresholds) -> Self {
        Self {
            backbone_name: backbone_name.to_string(),
            train_accuracy,
            val_accuracy,
            gap: train_accuracy - val_accuracy,
            flags: diagnose(train_accuracy, val_accuracy, thresholds),
        }
    }
}

/// One row per backbone, in first-appearance order. Several reports for the
/// same backbone and split (one per seed) are averaged.
pub fn compare(reports: &[EvalReport], thresholds: &DiagnosticThresholds) -> Result<Vec<ComparisonRow>, EvalError> {
    thresholds.validate()?;
    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !order.contains(&r.backbone_name.as_str()) {
            order.push(&r.backbone_name);
        }
    }
    order
        .into_iter()
        .map(|name| {
            let mean = |split: Split| -> Result<f64, EvalError> {
                let accs: Vec<f64> = reports
                    .iter()
                    .filter(|r| r.backbone_name == name && r.split == split)
                    .map(|r| r.accuracy)
                    .collect();
                if accs.is_empty() {
                    return Err(EvalError::MissingSplit {
                        backbone: name.to_string(),
                        split,
                    });
                }
                Ok(accs.iter().sum::<f64>() / accs.len() as f64)
            };
            Ok(ComparisonRow::new(name, mean(Split::Train)?, mean(Split::Val)?, thresholds))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(EvalError::Config(format!("unknown report format `{other}`"))),
        }
    }
}

fn joined_flags(flags: &BTreeSet<Flag>, sep: &str) -> String {
    flags.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(sep)
}

fn percent(v: f64) -> String {
    let s = format!("{:.2}", v * 100.0);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s}%")
}

pub fn render_comparison(rows: &[ComparisonRow], format: ReportFormat) -> Result<String, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::Config("nothing to render".into()));
    }
    Ok(match format {
        ReportFormat::Markdown => {
            let mut out = String::from(
                "| Model used | Training accuracy | Validation accuracy | Gap | Flags |\n|---|---|---|---|---|\n",
            );
            for r in rows {
                out.push_str(&format!(
                    "| {} | {} | {} | {:+.4} | {} |\n",
                    r.backbone_name,
                    percent(r.train_accuracy),
                    percent(r.val_accuracy),
                    r.gap,
                    joined_flags(&r.flags, ", ")
                ));
            }
            out
        }
        ReportFormat::Csv => {
            let mut out = String::from("backbone,train_accuracy,val_accuracy,gap,flags\n");
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.backbone_name,
                    r.train_accuracy,
                    r.val_accuracy,
                    r.gap,
                    joined_flags(&r.flags, ";")
                ));
            }
            out
        }
        ReportFormat::Json => {
            let doc = serde_json::json!({ "schema_version": 1, "rows": rows });
            serde_json::to_string_pretty(&doc).expect("rows serialize") + "\n"
        }
    })
}

/// Inverse of the JSON rendering.
pub fn parse_comparison_json(text: &str) -> Result<Vec<ComparisonRow>, EvalError> {
    #[derive(Deserialize)]
    struct Doc {
        rows: Vec<ComparisonRow>,
    }
    serde_json::from_str::<Doc>(text)
        .map(|d| d.rows)
        .map_err(|e| EvalError::Config(format!("bad comparison json: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot_probs(classes: &[usize]) -> Vec<Vec<f64>> {
        classes
            .iter()
            .map(|&c| {
                let mut p = vec![0.0; 3];
                p[c] = 1.0;
                p
            })
            .collect()
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let probs = one_hot_probs(&[0; 30]);
        let r = EvalReport::from_predictions("x", Split::Val, &probs, &labels).unwrap();
        assert_eq!(r.accuracy, 1.0 / 3.0);
        assert_eq!((0..3).map(|t| r.confusion[t][0]).sum::<u64>(), 30);
        assert_eq!(r.precision_defined, [true, false, false]);
        assert_eq!(r.per_class_precision, [1.0 / 3.0, 0.0, 0.0]);
        assert_eq!(r.per_class_recall, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn perfect_predictor() {
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let r = EvalReport::from_predictions("x", Split::Val, &one_hot_probs(&labels), &labels).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.per_class_recall, [1.0; 3]);
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(r.confusion[t][p], if t == p { 3 } else { 0 });
            }
        }
        // Certain and correct: the clipped loss is -ln(1 - 1e-7).
        assert!((r.loss - 1e-7).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0 / 3.0; 3]), 0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            EvalReport::from_predictions("x", Split::Val, &[], &[]),
            Err(EvalError::EmptyStream)
        ));
    }

    #[test]
    fn missing_split_names_the_backbone() {
        let r = EvalReport::from_predictions("vgg16", Split::Train, &one_hot_probs(&[0]), &[0]).unwrap();
        let err = compare(&[r], &DiagnosticThresholds::default()).unwrap_err();
        assert!(err.to_string().contains("vgg16"));
    }

    #[test]
    fn thresholds_validate_ordering() {
        assert!(DiagnosticThresholds::default().validate().is_ok());
        let bad = DiagnosticThresholds {
            low_perf_val_max: 0.2,
            ..DiagnosticThresholds::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn equal_accuracies_above_floor_have_no_flags() {
        for x in [0.61, 0.75, 1.0] {
            assert!(diagnose(x, x, &DiagnosticThresholds::default()).is_empty());
        }
    }

    #[test]
    fn unknown_format_is_rejected() {
        assert!("xml".parse::<ReportFormat>().is_err());
        assert_eq!("md".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(percent(0.9583), "95.83%");
        assert_eq!(percent(0.9), "90%");
        assert_eq!(percent(1.0), "100%");
    }
}
