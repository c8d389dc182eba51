use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use xcam_core::aanet::{train_reid, write_log_csv, ReidModel};
use xcam_core::camera_transfer::{
    default_target_camera, train_transfer, translate_dataset, write_transfer_log, TranslateOptions, TranslateScope,
    TranslationModel,
};
use xcam_core::dataset::{generate_toy_dataset, load_manifest, ImageRecord, Protocol, Split, ToyGenSpec};
use xcam_core::fsutil::write_atomic;
use xcam_core::metrics::{evaluate, evaluate_trials, EvalReport, ProtocolEcho, DEFAULT_MAX_RANK};
use xcam_core::retrieval::{extract, rank, CameraFilter, DescriptorStore, ExtractConfig};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::pipeline::{image_size_of, run_pipeline, transfer_diagnostics};
use crate::report::write_report;
use crate::{artifact_root, ARTIFACT_ROOT_ENV};

#[derive(Debug, Parser)]
#[command(name = "xcam", version, about = "Cross-camera adaptation for vehicle re-identification")]
#[command(after_help = "Default output locations live under $XCAM_ARTIFACTS (default ./artifacts).")]
pub struct Cli {
    /// Log level filter (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the seeded synthetic multi-camera dataset.
    Toygen(ToygenArgs),
    /// Train the camera-style translation GAN.
    TrainTransfer(TrainArgs),
    /// Translate a dataset into one camera style.
    Translate(TranslateArgs),
    /// Train the re-identification network.
    TrainReid(TrainArgs),
    /// Compute fused descriptors for a manifest split.
    Extract(ExtractArgs),
    /// Rank and score query descriptors against a gallery.
    Evaluate(EvaluateArgs),
    /// Run every stage from a config file (resumable).
    Pipeline(PipelineArgs),
    /// Combine evaluation reports into one table and CMC plot.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ToygenArgs {
    #[arg(long, default_value_t = 32)]
    pub ids: usize,
    #[arg(long, default_value_t = 4)]
    pub cameras: usize,
    #[arg(long, default_value_t = 2)]
    pub per: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment config (flat TOML); defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set seed=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<ExperimentConfig, CliError> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p, &self.overrides),
            None => ExperimentConfig::from_toml("", &self.overrides),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Target camera; defaults to the camera with the most training images.
    #[arg(long)]
    pub target: Option<usize>,
    /// Copy images already in the target camera instead of translating them.
    #[arg(long)]
    pub pass_through_target: bool,
    /// Translate every split, not only training images.
    #[arg(long)]
    pub all_splits: bool,
    /// With --all-splits, keep the original camera label of non-train records.
    #[arg(long)]
    pub keep_eval_cameras: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// train, query, gallery, test, or `eval` for every non-train record.
    #[arg(long, default_value = "eval")]
    pub split: String,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Skip per-branch L2 normalization before fusion.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, requires = "gallery", conflicts_with = "pool")]
    pub query: Option<PathBuf>,
    #[arg(long)]
    pub gallery: Option<PathBuf>,
    /// Pooled test descriptors for random-gallery trials.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value = "cross_camera")]
    pub filter: CameraFilter,
    #[arg(long, default_value_t = DEFAULT_MAX_RANK)]
    pub max_rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "model")]
    pub method: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Run directory; defaults to $XCAM_ARTIFACTS/<name>.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation report JSON files.
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn out_dir(out: &Option<PathBuf>, default: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| artifact_root().join(default))
}

fn echo_config(dir: &Path, cfg: &ExperimentConfig) -> Result<(), CliError> {
    write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    log::debug!("artifact root {} (${ARTIFACT_ROOT_ENV})", artifact_root().display());
    match cli.command {
        Command::Toygen(a) => {
            let out = out_dir(&a.out, "toy");
            let spec = ToyGenSpec::new(a.ids, a.cameras, a.per, a.size, a.seed);
            let m = generate_toy_dataset(&spec, &out)?;
            println!("{} images, {} identities, {} cameras -> {}", m.records.len(), m.n_identities, m.n_cameras, out.join("manifest.jsonl").display());
        }
        Command::TrainTransfer(a) => {
            let cfg = a.config.load()?;
            let manifest = load_manifest(&a.manifest)?;
            let out = out_dir(&a.out, "transfer");
            let mut tcfg = cfg.transfer_config(image_size_of(&manifest)?);
            tcfg.n_cameras = manifest.n_cameras;
            let (model, log) = train_transfer(&manifest, &tcfg)?;
            echo_config(&out, &cfg)?;
            model.save(&out.join("model.ckpt"))?;
            write_transfer_log(&log, &out.join("log.csv"))?;
            let diag = transfer_diagnostics(&model, &manifest)?;
            write_atomic(&out.join("diagnostics.json"), serde_json::to_string_pretty(&diag)?.as_bytes())?;
            println!("held-out camera accuracy {:.4}; checkpoint {}", diag.domain_accuracy, out.join("model.ckpt").display());
        }
        Command::Translate(a) => {
            if a.keep_eval_cameras && !a.all_splits {
                return Err(CliError::Usage("--keep-eval-cameras requires --all-splits".into()));
            }
            if !a.checkpoint.exists() {
                return Err(CliError::Validation(format!("checkpoint {} does not exist", a.checkpoint.display())));
            }
            let model = TranslationModel::load(&a.checkpoint)?;
            let manifest = load_manifest(&a.manifest)?;
            let target = a.target.unwrap_or_else(|| default_target_camera(&manifest));
            let opts = TranslateOptions {
                scope: if a.all_splits { TranslateScope::All } else { TranslateScope::TrainOnly },
                pass_through_target: a.pass_through_target,
                keep_eval_cameras: a.keep_eval_cameras,
                ..TranslateOptions::default()
            };
            let out = out_dir(&a.out, "translated");
            let m = translate_dataset(&model, &manifest, target, &out, &opts)?;
            println!("{} records translated to camera {target} -> {}", m.records.len(), out.join("manifest.jsonl").display());
        }
        Command::TrainReid(a) => {
            let cfg = a.config.load()?;
            let manifest = load_manifest(&a.manifest)?;
            let out = out_dir(&a.out, "reid");
            let rcfg = cfg.reid_config(image_size_of(&manifest)?);
            let (model, log) = train_reid(&manifest, &rcfg)?;
            echo_config(&out, &cfg)?;
            model.save(&out.join("model.ckpt"))?;
            write_log_csv(&log, &out.join("log.csv"))?;
            if let Some(last) = log.last() {
                println!("final loss {:.4}; checkpoint {}", last.total, out.join("model.ckpt").display());
            }
        }
        Command::Extract(a) => {
            if !a.checkpoint.exists() {
                return Err(CliError::Validation(format!("checkpoint {} does not exist", a.checkpoint.display())));
            }
            let model = ReidModel::load(&a.checkpoint)?;
            let manifest = load_manifest(&a.manifest)?;
            let records: Vec<ImageRecord> = match a.split.as_str() {
                "eval" => manifest.records.iter().filter(|r| r.split != Split::Train).cloned().collect(),
                s => {
                    let split: Split = serde_json::from_value(serde_json::Value::String(s.into()))
                        .map_err(|_| CliError::Usage(format!("unknown split {s:?}")))?;
                    manifest.split(split).cloned().collect()
                }
            };
            let cfg = ExtractConfig {
                alpha: a.alpha,
                normalize: !a.no_normalize,
                ..ExtractConfig::default()
            };
            let ex = extract(&model, &manifest, &records, &cfg)?;
            for (p, e) in &ex.failures {
                log::warn!("skipped {}: {e}", p.display());
            }
            let out = a.out.unwrap_or_else(|| artifact_root().join(format!("{}.desc", a.split)));
            ex.store.save(&out)?;
            println!("{} descriptors of length {} -> {}", ex.store.len(), ex.store.dim, out.display());
        }
        Command::Evaluate(a) => {
            let report: EvalReport = match (&a.query, &a.gallery, &a.pool) {
                (Some(q), Some(g), None) => {
                    let (q, g) = (DescriptorStore::load(q)?, DescriptorStore::load(g)?);
                    let ranking = rank(&q, &g, a.filter)?;
                    let echo = ProtocolEcho::new(Protocol::Veri, a.filter, a.seed, Vec::new(), a.max_rank);
                    evaluate(&ranking, &q, &g, echo, &a.method)?
                }
                (None, None, Some(p)) => {
                    evaluate_trials(&DescriptorStore::load(p)?, a.trials, a.seed, a.filter, a.max_rank, &a.method)?
                }
                _ => return Err(CliError::Usage("give --query and --gallery, or --pool".into())),
            };
            let out = a.out.unwrap_or_else(|| artifact_root().join(format!("{}.json", a.method)));
            report.save_json(&out)?;
            print!("{}", xcam_core::metrics::format_table(&[report.table_row()]));
        }
        Command::Pipeline(a) => {
            let cfg = a.config.load()?;
            let dir = a.run_dir.unwrap_or_else(|| artifact_root().join(&cfg.name));
            let outcome = run_pipeline(&cfg, &dir)?;
            print!("{}", std::fs::read_to_string(dir.join("evaluate").join("table.txt"))?);
            println!(
                "stages run: [{}], skipped: [{}]",
                outcome.stages_run.join(", "),
                outcome.stages_skipped.join(", ")
            );
        }
        Command::Report(a) => {
            if a.reports.is_empty() {
                return Err(CliError::Usage("report needs at least one report file".into()));
            }
            let reports = a.reports.iter().map(|p| EvalReport::load_json(p)).collect::<Result<Vec<_>, _>>()?;
            let out = out_dir(&a.out, "report");
            std::fs::create_dir_all(&out)?;
            print!("{}", write_report(&reports, &out)?);
        }
    }
    Ok(())
}
