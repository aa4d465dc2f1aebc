use std::path::PathBuf;

use serde::Serialize;

use super::{run_dir, train, Checkpoint, TrainError, TrainingHistory};
use crate::backbones::BackboneName;
use crate::data_pipeline::{
    load_and_rescale, AugmentationConfig, BatchStream, DataError, DatasetManifest, ImageRecord, PreprocessConfig,
    Split,
};
use crate::evaluator::{
    compare, evaluate, plot_history, render_comparison, ComparisonRow, DiagnosticThresholds, EvalReport, ReportFormat,
};
use crate::model_zoo::{build_model_with, BackboneSpec, HeadSpec, HyperParams, WeightSource};
use crate::tensor::Tensor3;

#[derive(Clone, Debug)]
pub struct SweepConfig {
    /// Where run directories and `comparison.{md,csv,json}` go; nothing is
    /// written when unset.
    pub runs_dir: Option<PathBuf>,
    pub weight_source: WeightSource,
    pub head: HeadSpec,
    pub augmentation: AugmentationConfig,
    pub rescale: f32,
    /// Overrides every backbone's canonical input side.
    pub input_size: Option<usize>,
    pub canonical_preprocessing: bool,
    pub thresholds: DiagnosticThresholds,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            runs_dir: None,
            weight_source: WeightSource::default(),
            head: HeadSpec::default(),
            augmentation: AugmentationConfig::default(),
            rescale: PreprocessConfig::default().rescale,
            input_size: None,
            canonical_preprocessing: false,
            thresholds: DiagnosticThresholds::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepEntry {
    pub backbone: BackboneName,
    pub seed: u64,
    pub history: TrainingHistory,
    pub checkpoint: Checkpoint,
    pub train_report: EvalReport,
    pub val_report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepFailure {
    pub backbone: BackboneName,
    /// Unset when the backbone failed before any seed ran.
    pub seed: Option<u64>,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    pub failures: Vec<SweepFailure>,
    /// Seed-averaged comparison over the successful entries.
    pub comparison: Vec<ComparisonRow>,
}

struct SplitData {
    records: Vec<ImageRecord>,
    tensors: Vec<Tensor3>,
}

fn decode_split(manifest: &DatasetManifest, split: Split, cfg: &PreprocessConfig) -> Result<SplitData, DataError> {
    use rayon::prelude::*;
    let records: Vec<ImageRecord> = manifest.split_records(split).into_iter().cloned().collect();
    if records.is_empty() {
        return Err(DataError::EmptySplit(split));
    }
    let tensors = records
        .par_iter()
        .map(|r| load_and_rescale(r, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SplitData { records, tensors })
}

/// Trains every backbone in `names` for every seed on the manifest's
/// assigned splits. A failing backbone or seed is recorded and the sweep
/// moves on.
pub fn run_sweep(
    names: &[BackboneName],
    manifest: &DatasetManifest,
    hparams: &HyperParams,
    seeds: &[u64],
    config: &SweepConfig,
) -> SweepReport {
    let mut report = SweepReport::default();
    for &name in names {
        if let Err(e) = sweep_backbone(name, manifest, hparams, seeds, config, &mut report) {
            log::error!("{name}: {e}");
            report.failures.push(SweepFailure {
                backbone: name,
                seed: None,
                error: e.to_string(),
            });
        }
    }
    let reports: Vec<EvalReport> = report
        .entries
        .iter()
        .flat_map(|e| [e.train_report.clone(), e.val_report.clone()])
        .collect();
    if !reports.is_empty() {
        match compare(&reports, &config.thresholds) {
            Ok(rows) => report.comparison = rows,
            Err(e) => log::error!("comparison failed: {e}"),
        }
    }
    if let (Some(runs), false) = (&config.runs_dir, report.comparison.is_empty()) {
        for format in [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json] {
            let path = runs.join(format!("comparison.{}", format.extension()));
            let written = render_comparison(&report.comparison, format)
                .map_err(|e| e.to_string())
                .and_then(|text| std::fs::write(&path, text).map_err(|e| e.to_string()));
            if let Err(e) = written {
                log::error!("writing {}: {e}", path.display());
            }
        }
    }
    report
}

fn sweep_backbone(
    name: BackboneName,
    manifest: &DatasetManifest,
    hparams: &HyperParams,
    seeds: &[u64],
    config: &SweepConfig,
    report: &mut SweepReport,
) -> Result<(), TrainError> {
    let spec = BackboneSpec {
        canonical_preprocessing: config.canonical_preprocessing,
        ..BackboneSpec::new(name).with_input_size(config.input_size.unwrap_or(name.default_input_size()))
    };
    let mut model = build_model_with(&spec, &config.head, crate::classes::NUM_CLASSES, &config.weight_source, 0)?;
    let preprocess = PreprocessConfig {
        rescale: config.rescale,
        batch_size: hparams.batch_size.max(1),
        ..PreprocessConfig::square(spec.input_size)
    };
    preprocess.validate()?;
    let train_data = decode_split(manifest, Split::Train, &preprocess)?;
    let val_data = decode_split(manifest, Split::Val, &preprocess)?;

    for &seed in seeds {
        let outcome = (|| -> Result<SweepEntry, TrainError> {
            let train_stream = BatchStream::from_tensors(
                Split::Train,
                train_data.records.clone(),
                train_data.tensors.clone(),
                preprocess.batch_size,
                &config.augmentation,
                true,
                seed,
            )?;
            let val_stream = BatchStream::from_tensors(
                Split::Val,
                val_data.records.clone(),
                val_data.tensors.clone(),
                preprocess.batch_size,
                &AugmentationConfig::disabled(),
                false,
                seed,
            )?;
            let (history, checkpoint) = train(&mut model, &train_stream, &val_stream, hparams, seed, config.runs_dir.as_deref())?;
            let train_report = evaluate(&model, &train_stream)?;
            let val_report = evaluate(&model, &val_stream)?;
            if let Some(runs) = &config.runs_dir {
                let dir = run_dir(runs, name, seed);
                for r in [&train_report, &val_report] {
                    std::fs::write(
                        dir.join(format!("eval_{}.json", r.split)),
                        serde_json::to_string_pretty(r).expect("report serializes"),
                    )?;
                }
                if !history.records.is_empty() {
                    plot_history(&history, &dir.join(format!("history_{name}_{seed}.png")))?;
                }
            }
            Ok(SweepEntry {
                backbone: name,
                seed,
                history,
                checkpoint,
                train_report,
                val_report,
            })
        })();
        match outcome {
            Ok(entry) => report.entries.push(entry),
            Err(e) => {
                log::error!("{name} seed {seed}: {e}");
                report.failures.push(SweepFailure {
                    backbone: name,
                    seed: Some(seed),
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(())
}
