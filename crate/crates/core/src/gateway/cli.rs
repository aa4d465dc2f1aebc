//! `paddydoc` command line. Exit codes: 0 success, 1 domain error, 2 usage.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use super::{GatewayError, ServiceConfig};
use crate::backbones::{BackboneName, UnknownBackbone};
use crate::data_pipeline::{
    assign_splits, expected_shape_problems, make_batches, scan_dataset, AugmentationConfig, DataError,
    DatasetManifest, PreprocessConfig, Split,
};
use crate::evaluator::{compare, evaluate, render_comparison, DiagnosticThresholds, EvalError, EvalReport, ReportFormat};
use crate::model_zoo::{cache, load_backbone_weights, EarlyStoppingConfig, HyperParams, WeightSource, ZooError};
use crate::predictor::{export_model, ArtifactMetrics, ExportOptions, PredictError};
use crate::trainer::{load_checkpoint, run_sweep, SweepConfig, TrainError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const MANIFEST_IN_RUNS: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Registry(#[from] UnknownBackbone),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Zoo(#[from] ZooError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_DOMAIN,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "paddydoc", version, about = "Rice-leaf disease classifier: benchmark, train, export and serve")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Backbone weight cache (defaults to $PADDYDOC_WEIGHTS_CACHE, then ~/.cache/paddydoc/weights).
    #[arg(long, global = true, value_name = "DIR")]
    weights_cache: Option<PathBuf>,
    /// Use seeded stand-in backbone parameters instead of the cache.
    #[arg(long, global = true, value_name = "SEED", conflicts_with = "weights_cache")]
    surrogate_weights: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Scan a class-per-folder image corpus and write a split manifest.
    Ingest {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, default_value_t = crate::data_pipeline::DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = crate::data_pipeline::DEFAULT_VAL_FRACTION)]
        val_fraction: f64,
        #[arg(long, default_value_t = 0.0)]
        test_fraction: f64,
        #[arg(long, default_value = "manifest.json")]
        out: PathBuf,
        /// Warn unless every class has exactly this many images.
        #[arg(long)]
        expect_per_class: Option<usize>,
    },
    /// Train one backbone's head.
    Train {
        #[arg(long)]
        backbone: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        recipe: RecipeArgs,
    },
    /// Train several backbones with an identical recipe and compare them.
    Sweep {
        /// `all` or a comma-separated list of backbone names.
        #[arg(long, default_value = "all")]
        backbones: String,
        #[arg(long, value_delimiter = ',', default_value = "42")]
        seeds: Vec<u64>,
        #[command(flatten)]
        recipe: RecipeArgs,
    },
    /// Re-score a run's best checkpoint on its train and val splits.
    Evaluate {
        /// Run directory, `<runs>/<backbone>/<seed>`.
        #[arg(long)]
        run: PathBuf,
        /// Defaults to the manifest saved in the runs directory.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Tabulate every evaluated run under a runs directory.
    Compare {
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: String,
        /// Defaults to `<runs-dir>/comparison.<ext>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a run's best checkpoint as a standalone artifact.
    Export {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve predictions over HTTP.
    Serve {
        #[arg(long)]
        artifact: PathBuf,
        /// Recommendation catalog; the bundled one when omitted.
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 10 * 1024 * 1024)]
        max_upload_bytes: usize,
        #[arg(long, default_value_t = 1.0)]
        frame_rate: f64,
        /// Append-only request log.
        #[arg(long, default_value = "predictions.log")]
        log_file: PathBuf,
    },
    /// Manage the backbone weight cache.
    Weights {
        #[command(subcommand)]
        action: WeightsAction,
    },
}

#[derive(Subcommand, Debug)]
enum WeightsAction {
    /// Show which backbones have usable cache entries.
    Status,
    /// Write seeded stand-in parameters into the cache (for demos and tests).
    Surrogate {
        #[arg(long, default_value = "all")]
        backbones: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct RecipeArgs {
    #[arg(long, default_value = "manifest.json")]
    manifest: PathBuf,
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value = "val_loss")]
    monitor: String,
    /// Override every backbone's input side (pixels).
    #[arg(long)]
    input_size: Option<usize>,
    /// Train without flip/zoom/shear augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Apply each backbone's own ImageNet input normalization after rescaling.
    #[arg(long)]
    canonical_preprocessing: bool,
}

impl RecipeArgs {
    fn hparams(&self) -> HyperParams {
        HyperParams {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            early_stopping: EarlyStoppingConfig {
                monitor: self.monitor.clone(),
                patience: self.patience,
                ..EarlyStoppingConfig::default()
            },
            ..HyperParams::default()
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn weight_source(cli: &Cli) -> WeightSource {
    match (cli.surrogate_weights, &cli.weights_cache) {
        (Some(seed), _) => WeightSource::Surrogate(seed),
        (None, Some(dir)) => WeightSource::Cache(dir.clone()),
        (None, None) => WeightSource::default(),
    }
}

fn parse_backbones(list: &str) -> Result<Vec<BackboneName>, CliError> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(BackboneName::ALL.to_vec());
    }
    let names = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<BackboneName>, _>>()?;
    if names.is_empty() {
        return Err(CliError::Usage("no backbones given".into()));
    }
    Ok(names)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let source = weight_source(&cli);
    // Checkpoints remember their backbone source; only an explicit flag overrides it.
    let explicit_source = (cli.surrogate_weights.is_some() || cli.weights_cache.is_some()).then(|| source.clone());
    match cli.command {
        Command::Ingest {
            data_dir,
            seed,
            val_fraction,
            test_fraction,
            out,
            expect_per_class,
        } => {
            let manifest = assign_splits(&scan_dataset(&data_dir)?, val_fraction, test_fraction, seed)?;
            if let Some(n) = expect_per_class {
                for p in expected_shape_problems(&manifest, n) {
                    log::warn!("{p}");
                }
            }
            for r in &manifest.rejects {
                log::warn!("skipped {}: {}", r.path.display(), r.reason);
            }
            manifest.save(&out)?;
            println!(
                "{} records ({} train, {} val, {} test) -> {}",
                manifest.records.len(),
                manifest.split_len(Split::Train),
                manifest.split_len(Split::Val),
                manifest.split_len(Split::Test),
                out.display()
            );
            Ok(())
        }
        Command::Train { backbone, seed, recipe } => {
            let name: BackboneName = backbone.parse()?;
            sweep(&[name], &[seed], &recipe, source)
        }
        Command::Sweep {
            backbones,
            seeds,
            recipe,
        } => sweep(&parse_backbones(&backbones)?, &seeds, &recipe, source),
        Command::Evaluate { run, manifest } => evaluate_run(&run, manifest, explicit_source),
        Command::Compare { runs_dir, format, out } => {
            let format: ReportFormat = format.parse().map_err(|e: EvalError| CliError::Usage(e.to_string()))?;
            compare_runs(&runs_dir, format, out)
        }
        Command::Export { run, out } => {
            let checkpoint = load_checkpoint(&run.join("best"))?;
            let mut options = ExportOptions {
                weight_source: explicit_source,
                ..ExportOptions::default()
            };
            if let Some(train) = read_report(&run, Split::Train)? {
                options.metrics = Some(ArtifactMetrics {
                    train_accuracy: train.accuracy,
                    val_accuracy: checkpoint.val_accuracy,
                });
            }
            let artifact = export_model(&checkpoint, &out, &options)?;
            println!(
                "exported {} (val accuracy {:.4}) -> {} [{}]",
                artifact.metadata.backbone_name,
                artifact.metadata.metrics.val_accuracy,
                out.display(),
                artifact.metadata.content_hash
            );
            Ok(())
        }
        Command::Serve {
            artifact,
            catalog,
            host,
            port,
            max_upload_bytes,
            frame_rate,
            log_file,
        } => {
            let config = ServiceConfig {
                host,
                port,
                artifact_path: artifact,
                catalog_path: catalog,
                max_upload_bytes,
                frame_rate_limit_per_s: frame_rate,
                log_path: Some(log_file),
            };
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(super::serve(config))?;
            Ok(())
        }
        Command::Weights { action } => weights(action, &cli.weights_cache),
    }
}

fn sweep(names: &[BackboneName], seeds: &[u64], recipe: &RecipeArgs, source: WeightSource) -> Result<(), CliError> {
    let manifest = DatasetManifest::load(&recipe.manifest)?;
    std::fs::create_dir_all(&recipe.runs_dir)?;
    manifest.save(&recipe.runs_dir.join(MANIFEST_IN_RUNS))?;
    let config = SweepConfig {
        runs_dir: Some(recipe.runs_dir.clone()),
        weight_source: source,
        augmentation: if recipe.no_augment {
            AugmentationConfig::disabled()
        } else {
            AugmentationConfig::default()
        },
        input_size: recipe.input_size,
        canonical_preprocessing: recipe.canonical_preprocessing,
        ..SweepConfig::default()
    };
    let report = run_sweep(names, &manifest, &recipe.hparams(), seeds, &config);
    for e in &report.entries {
        println!(
            "{} seed {}: best epoch {} of {}, train {:.4}, val {:.4}",
            e.backbone,
            e.seed,
            e.history.best_epoch,
            e.history.stopped_epoch,
            e.train_report.accuracy,
            e.val_report.accuracy
        );
    }
    if !report.comparison.is_empty() {
        print!("{}", render_comparison(&report.comparison, ReportFormat::Markdown)?);
    }
    if report.failures.is_empty() {
        return Ok(());
    }
    let lines: Vec<String> = report
        .failures
        .iter()
        .map(|f| match f.seed {
            Some(s) => format!("{} seed {s}: {}", f.backbone, f.error),
            None => format!("{}: {}", f.backbone, f.error),
        })
        .collect();
    Err(CliError::Failed(format!(
        "{} of {} runs failed:\n  {}",
        report.failures.len(),
        report.failures.len() + report.entries.len(),
        lines.join("\n  ")
    )))
}

fn read_report(run: &Path, split: Split) -> Result<Option<EvalReport>, CliError> {
    let path = run.join(format!("eval_{split}.json"));
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn evaluate_run(run: &Path, manifest: Option<PathBuf>, source: Option<WeightSource>) -> Result<(), CliError> {
    let checkpoint = load_checkpoint(&run.join("best"))?;
    let manifest_path = manifest.unwrap_or_else(|| run.join("..").join("..").join(MANIFEST_IN_RUNS));
    let manifest = DatasetManifest::load(&manifest_path)?;
    let model = checkpoint.restore(source.as_ref())?;
    let preprocess = PreprocessConfig::square(checkpoint.spec.input_size);
    for split in [Split::Train, Split::Val] {
        let stream = make_batches(&manifest, split, &preprocess, &AugmentationConfig::disabled(), false, manifest.seed)?;
        let report = evaluate(&model, &stream)?;
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(run.join(format!("eval_{split}.json")), &text)?;
        println!(
            "{split}: accuracy {:.4}, loss {:.4}, n {}",
            report.accuracy, report.loss, report.n_samples
        );
    }
    Ok(())
}

/// Reports found under `<runs>/<backbone>/<seed>/`, in registry order.
fn collect_reports(runs_dir: &Path) -> Result<Vec<EvalReport>, CliError> {
    let mut runs: Vec<(usize, String, PathBuf)> = Vec::new();
    for backbone in std::fs::read_dir(runs_dir)? {
        let backbone = backbone?;
        if !backbone.file_type()?.is_dir() {
            continue;
        }
        let rank = backbone
            .file_name()
            .to_str()
            .and_then(|n| n.parse::<BackboneName>().ok())
            .and_then(|b| BackboneName::ALL.iter().position(|x| *x == b))
            .unwrap_or(usize::MAX);
        for seed in std::fs::read_dir(backbone.path())? {
            let seed = seed?;
            if seed.file_type()?.is_dir() {
                runs.push((rank, seed.file_name().to_string_lossy().into_owned(), seed.path()));
            }
        }
    }
    runs.sort_by(|a, b| (a.0, a.1.parse::<u64>().ok(), &a.1).cmp(&(b.0, b.1.parse::<u64>().ok(), &b.1)));
    let mut reports = Vec::new();
    for (_, _, dir) in runs {
        if let (Some(t), Some(v)) = (read_report(&dir, Split::Train)?, read_report(&dir, Split::Val)?) {
            reports.push(t);
            reports.push(v);
        }
    }
    Ok(reports)
}

fn compare_runs(runs_dir: &Path, format: ReportFormat, out: Option<PathBuf>) -> Result<(), CliError> {
    let reports = collect_reports(runs_dir)?;
    if reports.is_empty() {
        return Err(CliError::Failed(format!("no evaluated runs under {}", runs_dir.display())));
    }
    let rows = compare(&reports, &DiagnosticThresholds::default())?;
    let text = render_comparison(&rows, format)?;
    let out = out.unwrap_or_else(|| runs_dir.join(format!("comparison.{}", format.extension())));
    std::fs::write(&out, &text)?;
    print!("{text}");
    Ok(())
}

fn weights(action: WeightsAction, cache_dir: &Option<PathBuf>) -> Result<(), CliError> {
    let dir = cache_dir.clone().unwrap_or_else(cache::default_cache_dir);
    match action {
        WeightsAction::Status => {
            println!("cache: {}", dir.display());
            for name in BackboneName::ALL {
                match load_backbone_weights(name, &WeightSource::Cache(dir.clone())) {
                    Ok((_, rec)) => println!(
                        "{name:<15} ok  {}{}",
                        rec.origin,
                        if rec.surrogate { " (surrogate)" } else { "" }
                    ),
                    Err(e) => println!("{name:<15} --  {e}"),
                }
            }
            Ok(())
        }
        WeightsAction::Surrogate { backbones, seed } => {
            for name in parse_backbones(&backbones)? {
                let rec = cache::write_surrogate_entry(&dir, name, seed)?;
                println!("{name}: {} -> {}", rec.content_hash, cache::entry_dir(&dir, name).display());
            }
            Ok(())
        }
    }
}
