//! End-to-end experiment runner.
//!
//! A run directory holds one subdirectory per stage. A stage is complete when
//! its `stage.json` exists; that record carries a fingerprint of everything
//! the stage depends on (its config slice and the upstream fingerprint). On
//! rerun, complete stages with a matching fingerprint are skipped, so resuming
//! an interrupted run repeats only the unfinished work.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use xcam_core::aanet::{train_reid, write_log_csv, ReidModel};
use xcam_core::camera_transfer::{
    default_target_camera, domain_accuracy, train_transfer, translate_dataset, write_transfer_log, TranslateOptions,
    TranslateScope, TranslationModel,
};
use xcam_core::dataset::imageio::{load_all, load_rgb};
use xcam_core::dataset::{generate_toy_dataset, load_manifest, DatasetManifest, ImageRecord, Split};
use xcam_core::fsutil::{sha256_hex, write_atomic};
use xcam_core::metrics::{evaluate, evaluate_trials, EvalReport, ProtocolEcho};
use xcam_core::retrieval::{extract, rank, DescriptorStore};
use xcam_core::Tensor;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::report::write_report;

pub const LOCK_FILE: &str = "run.lock";
pub const STAGE_FILE: &str = "stage.json";

/// Descriptor rows of the comparison table, with their column range in the
/// fused `[g, u, l]` descriptor (in units of the branch length).
pub const DESCRIPTORS: [(&str, usize, usize); 4] = [("global", 0, 1), ("Part1", 1, 1), ("Part2", 2, 1), ("All", 0, 3)];

/// Exclusive ownership of a run directory for the lifetime of the value.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(run_dir)?;
        let path = run_dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                writeln!(f, "{}", std::process::id())?;
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Runtime(format!(
                "{} is locked by another run (remove {} if that run is gone)",
                run_dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub fingerprint: String,
    pub seed: u64,
    pub inputs: serde_json::Value,
}

#[derive(Clone, Debug, Default)]
pub struct PipelineOutcome {
    pub run_dir: PathBuf,
    pub reports: Vec<EvalReport>,
    pub stages_run: Vec<String>,
    pub stages_skipped: Vec<String>,
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    dir: PathBuf,
    outcome: PipelineOutcome,
}

impl Runner<'_> {
    fn stage_dir(&self, stage: &str) -> PathBuf {
        self.dir.join(stage)
    }

    /// Run `body` unless the stage already completed with the same inputs.
    /// Returns the stage fingerprint.
    fn stage(
        &mut self,
        stage: &str,
        inputs: serde_json::Value,
        body: impl FnOnce(&Path) -> Result<(), CliError>,
    ) -> Result<String, CliError> {
        let fingerprint = sha256_hex(serde_json::to_string(&json!({"stage": stage, "inputs": inputs}))?.as_bytes());
        let dir = self.stage_dir(stage);
        let record_path = dir.join(STAGE_FILE);
        if let Ok(text) = fs::read_to_string(&record_path) {
            if let Ok(rec) = serde_json::from_str::<StageRecord>(&text) {
                if rec.fingerprint == fingerprint {
                    log::info!("stage {stage}: up to date, skipping");
                    self.outcome.stages_skipped.push(stage.to_string());
                    return Ok(fingerprint);
                }
            }
            log::info!("stage {stage}: inputs changed, rerunning");
            fs::remove_file(&record_path)?;
        }
        log::info!("stage {stage}: running");
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join("config.toml"), self.cfg.to_toml().as_bytes())?;
        body(&dir)?;
        let rec = StageRecord {
            stage: stage.to_string(),
            fingerprint: fingerprint.clone(),
            seed: self.cfg.seed,
            inputs,
        };
        write_atomic(&record_path, serde_json::to_string_pretty(&rec)?.as_bytes())?;
        self.outcome.stages_run.push(stage.to_string());
        Ok(fingerprint)
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value, CliError> {
    Ok(serde_json::to_value(v)?)
}

/// Side length of the (square) images of a manifest, read from its first record.
pub fn image_size_of(manifest: &DatasetManifest) -> Result<usize, CliError> {
    let first = manifest
        .records
        .first()
        .ok_or_else(|| CliError::Validation(format!("manifest {:?} has no records", manifest.name)))?;
    let t = load_rgb(&manifest.resolve(first))?;
    match t.shape() {
        [3, h, w] if h == w => Ok(*h),
        s => Err(CliError::Validation(format!("images must be square, got {s:?}"))),
    }
}

/// Per-camera translation statistics on held-out images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferDiagnostics {
    /// Camera-head accuracy on real non-train images.
    pub domain_accuracy: f64,
    pub n_heldout: usize,
    /// `shift[s][t]`: mean brightness change, in 8-bit levels, when
    /// translating held-out images of camera `s` to camera `t`.
    pub brightness_shift: Vec<Vec<f64>>,
}

pub fn transfer_diagnostics(model: &TranslationModel, manifest: &DatasetManifest) -> Result<TransferDiagnostics, CliError> {
    let records: Vec<ImageRecord> = manifest.records.iter().filter(|r| r.split != Split::Train).cloned().collect();
    let images = load_all(manifest, &records)?;
    let cameras: Vec<usize> = records.iter().map(|r| r.camera_id as usize).collect();
    let domain_accuracy = domain_accuracy(model, &images, &cameras)?;
    let n = model.config.n_cameras;
    let mean = |t: &Tensor| 255.0 * t.data().iter().sum::<f64>() / t.numel() as f64;
    let mut brightness_shift = vec![vec![0.0; n]; n];
    for (src, row) in brightness_shift.iter_mut().enumerate() {
        let xs: Vec<Tensor> = images.iter().zip(&cameras).filter(|(_, &c)| c == src).map(|(t, _)| t.clone()).collect();
        if xs.is_empty() {
            continue;
        }
        for (tgt, cell) in row.iter_mut().enumerate() {
            let (mut before, mut after) = (0.0, 0.0);
            for chunk in xs.chunks(32) {
                let x = Tensor::stack(chunk)?;
                let y = model.translate(&x, &vec![tgt; chunk.len()])?;
                before += mean(&x) * chunk.len() as f64;
                after += mean(&y) * chunk.len() as f64;
            }
            *cell = (after - before) / xs.len() as f64;
        }
    }
    Ok(TransferDiagnostics {
        domain_accuracy,
        n_heldout: records.len(),
        brightness_shift,
    })
}

fn eval_records(manifest: &DatasetManifest, split: Split) -> Vec<ImageRecord> {
    manifest.split(split).cloned().collect()
}

/// Evaluate one descriptor column range of the query/gallery (or pool) stores.
fn evaluate_descriptor(
    cfg: &ExperimentConfig,
    stores: &Stores,
    start: usize,
    len: usize,
    method: &str,
) -> Result<EvalReport, CliError> {
    Ok(match stores {
        Stores::Fixed { query, gallery } => {
            let (q, g) = (query.columns(start, len)?, gallery.columns(start, len)?);
            let ranking = rank(&q, &g, cfg.filter)?;
            let echo = ProtocolEcho::new(cfg.protocol, cfg.filter, cfg.seed, Vec::new(), cfg.max_rank);
            evaluate(&ranking, &q, &g, echo, method)?
        }
        Stores::Pool(pool) => evaluate_trials(&pool.columns(start, len)?, cfg.trials, cfg.seed, cfg.filter, cfg.max_rank, method)?,
    })
}

enum Stores {
    Fixed { query: DescriptorStore, gallery: DescriptorStore },
    Pool(DescriptorStore),
}

fn load_stores(dir: &Path) -> Result<Stores, CliError> {
    let pool = dir.join("pool.desc");
    Ok(if pool.exists() {
        Stores::Pool(DescriptorStore::load(&pool)?)
    } else {
        Stores::Fixed {
            query: DescriptorStore::load(&dir.join("query.desc"))?,
            gallery: DescriptorStore::load(&dir.join("gallery.desc"))?,
        }
    })
}

/// Run (or resume) the pipeline in `run_dir`.
pub fn run_pipeline(cfg: &ExperimentConfig, run_dir: &Path) -> Result<PipelineOutcome, CliError> {
    cfg.validate()?;
    let _lock = RunLock::acquire(run_dir)?;
    write_atomic(&run_dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    let mut r = Runner {
        cfg,
        dir: run_dir.to_path_buf(),
        outcome: PipelineOutcome {
            run_dir: run_dir.to_path_buf(),
            ..Default::default()
        },
    };

    // Dataset: an existing manifest, or a generated toy set.
    let data_inputs = match &cfg.manifest {
        Some(m) => json!({"manifest": m, "sha256": xcam_core::fsutil::sha256_file(m)?}),
        None => json!({"toy": to_json(&cfg.toy_spec())?}),
    };
    let data_fp = r.stage("data", data_inputs, |dir| {
        if cfg.manifest.is_none() {
            generate_toy_dataset(&cfg.toy_spec(), dir)?;
        }
        Ok(())
    })?;
    let manifest = match &cfg.manifest {
        Some(m) => load_manifest(m)?,
        None => load_manifest(&r.stage_dir("data").join("manifest.jsonl"))?,
    };
    let size = image_size_of(&manifest)?;

    // Camera transfer and translation of the training set.
    let (train_manifest, upstream) = if cfg.use_transfer {
        let mut tcfg = cfg.transfer_config(size);
        tcfg.n_cameras = manifest.n_cameras;
        let transfer_fp = r.stage("transfer", json!({"data": data_fp, "config": to_json(&tcfg)?}), |dir| {
            let (model, log) = train_transfer(&manifest, &tcfg)?;
            model.save(&dir.join("model.ckpt"))?;
            write_transfer_log(&log, &dir.join("log.csv"))?;
            let diag = transfer_diagnostics(&model, &manifest)?;
            write_atomic(&dir.join("diagnostics.json"), serde_json::to_string_pretty(&diag)?.as_bytes())?;
            Ok(())
        })?;
        let target = cfg.target_camera.unwrap_or_else(|| default_target_camera(&manifest));
        let opts = TranslateOptions {
            scope: if cfg.translate_eval {
                TranslateScope::All
            } else {
                TranslateScope::TrainOnly
            },
            pass_through_target: cfg.translate_pass_through_target,
            keep_eval_cameras: true,
            ..TranslateOptions::default()
        };
        let translate_fp = r.stage(
            "translate",
            json!({"transfer": transfer_fp, "target": target, "options": to_json(&opts)?}),
            |dir| {
                let model = TranslationModel::load(&r_stage(run_dir, "transfer").join("model.ckpt"))?;
                translate_dataset(&model, &manifest, target, dir, &opts)?;
                Ok(())
            },
        )?;
        (load_manifest(&r.stage_dir("translate").join("manifest.jsonl"))?, translate_fp)
    } else {
        (manifest.clone(), data_fp)
    };

    let rcfg = cfg.reid_config(size);
    let reid_fp = r.stage("reid", json!({"data": upstream, "config": to_json(&rcfg)?}), |dir| {
        let (model, log) = train_reid(&train_manifest, &rcfg)?;
        model.save(&dir.join("model.ckpt"))?;
        write_log_csv(&log, &dir.join("log.csv"))?;
        Ok(())
    })?;

    let ecfg = cfg.extract_config();
    let extract_fp = r.stage(
        "extract",
        json!({"reid": reid_fp, "config": to_json(&ecfg)?, "protocol": cfg.protocol}),
        |dir| {
            let model = ReidModel::load(&r_stage(run_dir, "reid").join("model.ckpt"))?;
            let sets: Vec<(&str, Vec<ImageRecord>)> = match cfg.protocol {
                xcam_core::dataset::Protocol::Veri => vec![
                    ("query", eval_records(&train_manifest, Split::Query)),
                    ("gallery", eval_records(&train_manifest, Split::Gallery)),
                ],
                xcam_core::dataset::Protocol::VehicleId => vec![(
                    "pool",
                    train_manifest.records.iter().filter(|r| r.split != Split::Train).cloned().collect(),
                )],
            };
            let mut failures = String::new();
            for (name, records) in sets {
                if records.is_empty() {
                    return Err(CliError::Validation(format!("no {name} records to extract")));
                }
                let ex = extract(&model, &train_manifest, &records, &ecfg)?;
                for (p, e) in &ex.failures {
                    log::warn!("skipped {}: {e}", p.display());
                    failures.push_str(&format!("{}\t{e}\n", p.display()));
                }
                ex.store.save(&dir.join(format!("{name}.desc")))?;
            }
            write_atomic(&dir.join("failures.tsv"), failures.as_bytes())?;
            Ok(())
        },
    )?;

    let label = cfg.method_label();
    let mut reports = Vec::new();
    r.stage(
        "evaluate",
        json!({"extract": extract_fp, "protocol": cfg.protocol, "filter": cfg.filter, "trials": cfg.trials,
               "max_rank": cfg.max_rank, "seed": cfg.seed, "method": label}),
        |dir| {
            let stores = load_stores(&r_stage(run_dir, "extract"))?;
            let d = cfg.embedding_dim;
            let mut out = Vec::new();
            for (name, start, len) in DESCRIPTORS {
                let rep = evaluate_descriptor(cfg, &stores, start * d, len * d, &format!("{label}-{name}"))?;
                rep.save_json(&dir.join(format!("{name}.json")))?;
                out.push(rep);
            }
            write_report(&out, dir)?;
            Ok(())
        },
    )?;
    for (name, _, _) in DESCRIPTORS {
        reports.push(EvalReport::load_json(&r.stage_dir("evaluate").join(format!("{name}.json")))?);
    }
    r.outcome.reports = reports;
    Ok(r.outcome)
}

fn r_stage(run_dir: &Path, stage: &str) -> PathBuf {
    run_dir.join(stage)
}
