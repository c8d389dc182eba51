use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::TranslationModel;
use crate::dataset::imageio::{load_rgb, save_rgb};
use crate::dataset::{DatasetManifest, ImageRecord, Split};
use crate::error::{Error, IoContext, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslateScope {
    /// Translate train records; query/gallery records are copied unchanged.
    TrainOnly,
    /// Translate every record.
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslateOptions {
    pub scope: TranslateScope,
    /// Copy images already in the target camera instead of translating them.
    pub pass_through_target: bool,
    /// Keep the camera label of translated query/gallery/test records, so
    /// cross-camera filtering still sees where each image came from.
    pub keep_eval_cameras: bool,
    pub batch_size: usize,
}

impl Default for TranslateOptions {
    fn default() -> Self {
        TranslateOptions {
            scope: TranslateScope::TrainOnly,
            pass_through_target: false,
            keep_eval_cameras: false,
            batch_size: 16,
        }
    }
}

/// Camera with the most training images (lowest id on ties).
pub fn default_target_camera(manifest: &DatasetManifest) -> usize {
    let mut counts = vec![0usize; manifest.n_cameras.max(1)];
    for r in manifest.split(Split::Train) {
        counts[r.camera_id as usize] += 1;
    }
    counts
        .iter()
        .enumerate()
        .fold(0, |best, (i, &c)| if c > counts[best] { i } else { best })
}

fn out_name(r: &ImageRecord) -> PathBuf {
    let name = r.image_path.file_name().map(PathBuf::from).unwrap_or_else(|| "image.png".into());
    Path::new("images").join(r.split.to_string()).join(name)
}

/// Write a translated copy of `manifest` into `out_dir`.
///
/// Translated records are relabelled with `target_camera`; records outside the
/// scope keep their camera and pixels. Record count and identities are unchanged.
pub fn translate_dataset(
    model: &TranslationModel,
    manifest: &DatasetManifest,
    target_camera: usize,
    out_dir: &Path,
    opts: &TranslateOptions,
) -> Result<DatasetManifest> {
    if target_camera >= model.config.n_cameras {
        return Err(Error::validation(format!(
            "target camera {target_camera} outside {} cameras",
            model.config.n_cameras
        )));
    }
    if opts.batch_size == 0 {
        return Err(Error::validation("translate batch_size must be positive"));
    }
    let in_scope = |r: &ImageRecord| opts.scope == TranslateScope::All || r.split == Split::Train;
    let mut out = Vec::with_capacity(manifest.records.len());
    let mut pending: Vec<(&ImageRecord, Tensor)> = Vec::new();
    let flush = |pending: &mut Vec<(&ImageRecord, Tensor)>, out: &mut Vec<ImageRecord>| -> Result<()> {
        if pending.is_empty() {
            return Ok(());
        }
        let x = Tensor::stack(&pending.iter().map(|p| p.1.clone()).collect::<Vec<_>>())?;
        let y = model.translate(&x, &vec![target_camera; pending.len()])?;
        for (i, (r, _)) in pending.iter().enumerate() {
            let rel = out_name(r);
            let img = y.slice_batch(i, 1)?;
            let dims = img.shape()[1..].to_vec();
            save_rgb(&img.reshape(dims)?, &out_dir.join(&rel))?;
            out.push(ImageRecord {
                image_path: rel,
                vehicle_id: r.vehicle_id,
                camera_id: if opts.keep_eval_cameras && r.split != Split::Train {
                    r.camera_id
                } else {
                    target_camera as u32
                },
                split: r.split,
            });
        }
        pending.clear();
        Ok(())
    };
    for r in &manifest.records {
        let src = manifest.resolve(r);
        let translate = in_scope(r) && !(opts.pass_through_target && r.camera_id as usize == target_camera);
        if translate {
            pending.push((r, load_rgb(&src)?));
            if pending.len() == opts.batch_size {
                flush(&mut pending, &mut out)?;
            }
        } else {
            let rel = out_name(r);
            let bytes = std::fs::read(&src).io_ctx(|| format!("reading {}", src.display()))?;
            crate::fsutil::write_atomic(&out_dir.join(&rel), &bytes)?;
            let mut copy = r.clone();
            copy.image_path = rel;
            out.push(copy);
        }
    }
    flush(&mut pending, &mut out)?;
    let translated = DatasetManifest::new(
        format!("{}-to-c{target_camera}", manifest.name),
        manifest.n_cameras,
        out,
        out_dir.to_path_buf(),
    )?;
    translated.save(&out_dir.join("manifest.jsonl"))?;
    Ok(translated)
}
