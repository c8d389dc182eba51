use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::fusion::{fuse, l2_normalize};
use super::store::{DescriptorMeta, DescriptorStore};
use crate::aanet::ReidModel;
use crate::dataset::imageio::load_rgb;
use crate::dataset::{DatasetManifest, ImageRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub alpha: f64,
    /// L2-normalize each branch feature before fusion.
    pub normalize: bool,
    pub batch_size: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            alpha: 0.5,
            normalize: true,
            batch_size: 32,
        }
    }
}

/// Descriptors plus the records that could not be read.
#[derive(Debug)]
pub struct Extraction {
    pub store: DescriptorStore,
    pub failures: Vec<(PathBuf, String)>,
}

/// Fused descriptor rows for a batch of images `[N, 3, S, S]`.
pub fn describe_batch(model: &ReidModel, x: &Tensor, cfg: &ExtractConfig) -> Result<Vec<Vec<f64>>> {
    let (g, u, l) = model.features(x)?;
    let d = model.net.config.embedding_dim;
    let n = x.shape()[0];
    (0..n)
        .map(|i| {
            let mut parts = [g.data(), u.data(), l.data()].map(|t| t[i * d..(i + 1) * d].to_vec());
            if cfg.normalize {
                parts.iter_mut().for_each(|p| l2_normalize(p));
            }
            fuse(&parts[0], &parts[1], &parts[2], cfg.alpha)
        })
        .collect()
}

/// One fused descriptor per readable record, in record order. Unreadable
/// images are skipped and reported in [`Extraction::failures`].
pub fn extract(model: &ReidModel, manifest: &DatasetManifest, records: &[ImageRecord], cfg: &ExtractConfig) -> Result<Extraction> {
    if cfg.batch_size == 0 {
        return Err(Error::validation("extract batch_size must be positive"));
    }
    let echo = serde_json::json!({
        "alpha": cfg.alpha,
        "normalize": cfg.normalize,
        "embedding_dim": model.net.config.embedding_dim,
        "manifest": manifest.name,
    });
    let mut store = DescriptorStore::new(3 * model.net.config.embedding_dim, echo);
    let mut failures = Vec::new();
    for chunk in records.chunks(cfg.batch_size) {
        let mut imgs = Vec::new();
        let mut ok = Vec::new();
        for r in chunk {
            let path = manifest.resolve(r);
            match load_rgb(&path) {
                Ok(t) => {
                    imgs.push(t);
                    ok.push(r);
                }
                Err(e) => failures.push((path, e.to_string())),
            }
        }
        if imgs.is_empty() {
            continue;
        }
        let rows = describe_batch(model, &Tensor::stack(&imgs)?, cfg)?;
        for (row, r) in rows.iter().zip(ok) {
            store.push(
                row,
                DescriptorMeta {
                    vehicle_id: r.vehicle_id,
                    camera_id: r.camera_id,
                    path: r.image_path.clone(),
                },
            )?;
        }
    }
    Ok(Extraction { store, failures })
}
