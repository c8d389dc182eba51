//! Identity-classification training of AANet with SGD and a step-drop schedule.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{total_loss_var, LossWeights};
use super::model::{AANet, AANetConfig};
use crate::dataset::imageio::load_all;
use crate::dataset::{DatasetManifest, ImageRecord, Split};
use crate::error::{Error, Result};
use crate::autograd::BatchStats;
use crate::nn::{apply_batch_stats, checkpoint, LrSchedule, Mode, ParamGrads, ParamId, ParamStore, Session, Sgd};
use crate::rng::{stream, tag};
use crate::tensor::Tensor;

pub const CHECKPOINT_KIND: &str = "aanet";
const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReidTrainConfig {
    /// `n_identities` is overwritten with the number of training identities.
    pub model: AANetConfig,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub seed: u64,
}

impl ReidTrainConfig {
    /// 0.1 for 10 epochs, then 0.01 for 5; SGD momentum 0.9, weight decay 5e-4, batch 16.
    pub fn toy(image_size: usize, seed: u64) -> Self {
        ReidTrainConfig {
            model: AANetConfig::toy(0, image_size),
            schedule: LrSchedule::StepDrop {
                base: 0.1,
                high_epochs: 10,
                low_epochs: 5,
                factor: 0.1,
            },
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 16,
            weights: LossWeights::default(),
            seed,
        }
    }
}

/// A network, its parameters and the vehicle id of each class index.
#[derive(Clone, Debug)]
pub struct ReidModel {
    pub net: AANet,
    pub store: ParamStore,
    pub classes: Vec<u32>,
    pub train_config: ReidTrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReidLogRow {
    pub epoch: usize,
    pub l_g: f64,
    pub l_u: f64,
    pub l_l: f64,
    pub total: f64,
    pub learning_rate: f64,
}

#[derive(Serialize, Deserialize)]
struct Echo {
    train: ReidTrainConfig,
    n_identities: usize,
    classes: Vec<u32>,
}

impl ReidModel {
    /// Freshly initialized model for the given classes.
    pub fn init(mut cfg: ReidTrainConfig, classes: Vec<u32>) -> Result<Self> {
        cfg.model.n_identities = classes.len();
        let mut store = ParamStore::new();
        let mut rng = stream(&[cfg.seed, tag::REID_INIT]);
        let net = AANet::new(cfg.model.clone(), &mut store, &mut rng)?;
        Ok(ReidModel {
            net,
            store,
            classes,
            train_config: cfg,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let echo = serde_json::to_value(Echo {
            train: self.train_config.clone(),
            n_identities: self.classes.len(),
            classes: self.classes.clone(),
        })?;
        checkpoint::save(path, CHECKPOINT_KIND, &echo, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = checkpoint::load(path)?;
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!(
                "{} holds a {:?} model, expected {CHECKPOINT_KIND:?}",
                path.display(),
                ck.kind
            )));
        }
        let echo: Echo = serde_json::from_value(ck.config)?;
        let mut m = ReidModel::init(echo.train, echo.classes)?;
        m.store.load_from(&ck.params)?;
        Ok(m)
    }

    /// Eval-mode branch features for a batch.
    pub fn features(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        self.net.features(&self.store, x)
    }
}

/// Sorted distinct vehicle ids of `records`.
pub fn class_list(records: &[ImageRecord]) -> Vec<u32> {
    let ids: BTreeMap<u32, ()> = records.iter().map(|r| (r.vehicle_id, ())).collect();
    ids.into_keys().collect()
}

/// Train on the manifest's train split.
pub fn train_reid(manifest: &DatasetManifest, cfg: &ReidTrainConfig) -> Result<(ReidModel, Vec<ReidLogRow>)> {
    let records: Vec<ImageRecord> = manifest.split(Split::Train).cloned().collect();
    if records.is_empty() {
        return Err(Error::validation("train_reid: the manifest has no train records"));
    }
    let images = load_all(manifest, &records)?;
    train_reid_on(&images, &records, cfg)
}

/// One training-mode batch: `[l_g, l_u, l_l, total]`, the gradient of the
/// total, and the batch statistics for the running BN buffers.
pub struct ReidStep {
    pub losses: [f64; 4],
    pub grads: ParamGrads,
    pub stats: Vec<(ParamId, ParamId, BatchStats)>,
}

fn objective(net: &AANet, store: &ParamStore, x: &Tensor, labels: &[usize], weights: LossWeights, grads: bool) -> Result<ReidStep> {
    let mut s = Session::new(store, Mode::Train);
    let o = net.forward(&mut s, x)?;
    let l_g = s.graph.cross_entropy(o.logits_g, labels)?;
    let l_u = s.graph.cross_entropy(o.logits_u, labels)?;
    let l_l = s.graph.cross_entropy(o.logits_l, labels)?;
    let total = total_loss_var(&mut s.graph, l_g, l_u, l_l, weights)?;
    let losses = [l_g, l_u, l_l, total].map(|v| s.value(v).item());
    let grads = if grads { s.gradients(total)? } else { ParamGrads::default() };
    Ok(ReidStep {
        losses,
        grads,
        stats: s.into_batch_stats(),
    })
}

pub fn reid_step(net: &AANet, store: &ParamStore, x: &Tensor, labels: &[usize], weights: LossWeights) -> Result<ReidStep> {
    objective(net, store, x, labels, weights, true)
}

/// Training-mode `[l_g, l_u, l_l, total]` without gradients.
pub fn reid_losses(net: &AANet, store: &ParamStore, x: &Tensor, labels: &[usize], weights: LossWeights) -> Result<[f64; 4]> {
    Ok(objective(net, store, x, labels, weights, false)?.losses)
}

/// Train on already loaded `[3, S, S]` images.
pub fn train_reid_on(images: &[Tensor], records: &[ImageRecord], cfg: &ReidTrainConfig) -> Result<(ReidModel, Vec<ReidLogRow>)> {
    let classes = class_list(records);
    if classes.len() < 2 {
        return Err(Error::validation(format!(
            "train_reid needs at least 2 identities, found {}",
            classes.len()
        )));
    }
    if cfg.batch_size < 2 {
        return Err(Error::validation("batch_size must be at least 2 (batch normalization)"));
    }
    cfg.weights.validate()?;
    let index: BTreeMap<u32, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let labels: Vec<usize> = records.iter().map(|r| index[&r.vehicle_id]).collect();
    let mut model = ReidModel::init(cfg.clone(), classes)?;
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    opt.set_lr_scale(&AANet::alignment_params(&model.store), cfg.model.align_lr_scale);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..images.len()).collect();
    for epoch in 0..cfg.schedule.total_epochs() {
        let lr = cfg.schedule.rate(epoch);
        order.sort_unstable();
        order.shuffle(&mut stream(&[cfg.seed, tag::REID_TRAIN, epoch as u64]));
        let mut sums = [0.0; 4];
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let x = Tensor::stack(&chunk.iter().map(|&i| images[i].clone()).collect::<Vec<_>>())?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let step = reid_step(&model.net, &model.store, &x, &y, cfg.weights)?;
            let parts = step.losses;
            if !parts[3].is_finite() {
                return Err(Error::Domain {
                    op: "train_reid",
                    msg: format!("loss diverged at epoch {epoch}"),
                });
            }
            let (grads, stats) = (step.grads, step.stats);
            opt.step(&mut model.store, &grads, lr);
            apply_batch_stats(&mut model.store, &stats, BN_MOMENTUM);
            for (acc, v) in sums.iter_mut().zip(parts) {
                *acc += v;
            }
            steps += 1;
        }
        let k = steps.max(1) as f64;
        let row = ReidLogRow {
            epoch,
            l_g: sums[0] / k,
            l_u: sums[1] / k,
            l_l: sums[2] / k,
            total: sums[3] / k,
            learning_rate: lr,
        };
        log::info!(
            "reid epoch {epoch}: total {:.4} (g {:.4}, u {:.4}, l {:.4}) lr {lr}",
            row.total,
            row.l_g,
            row.l_u,
            row.l_l
        );
        log.push(row);
    }
    Ok((model, log))
}

pub fn write_log_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(format!("writing {}", path.display()), e.into_error()))?;
    crate::fsutil::write_atomic(path, &bytes)
}
