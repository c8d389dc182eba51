//! Alternating training: a discriminator update on a detached fake batch, then
//! (every `n_critic` batches) a generator update against the updated
//! discriminator. Each network has its own Adam state.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::model::{GeneratorAdv, TransferConfig, TranslationModel};
use crate::autograd::Var;
use crate::dataset::imageio::load_all;
use crate::dataset::{DatasetManifest, ImageRecord, Split};
use crate::error::{Error, Result};
use crate::nn::{Adam, Mode, ParamGrads, ParamId, Session};
use crate::rng::{stream, tag};
use crate::tensor::Tensor;

/// Loss values of one step.
///
/// `total_d = -l_adv + lambda_dom * l_dom_real` and
/// `total_g = l_adv_g + lambda_dom * l_dom_fake + lambda_rec * l_rec`, where
/// `l_adv_g = -E[log D_src(G(x, c))]` is the non-saturating form of the
/// generator's side of `l_adv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferLossReport {
    pub l_adv: f64,
    pub l_dom_real: f64,
    pub l_dom_fake: f64,
    pub l_rec: f64,
    pub l_adv_g: f64,
    pub total_g: f64,
    pub total_d: f64,
    pub lambda_dom: f64,
    pub lambda_rec: f64,
}

impl TransferLossReport {
    pub fn expected_total_g(&self) -> f64 {
        self.l_adv_g + self.lambda_dom * self.l_dom_fake + self.lambda_rec * self.l_rec
    }

    pub fn expected_total_d(&self) -> f64 {
        -self.l_adv + self.lambda_dom * self.l_dom_real
    }
}

/// Losses plus gradients of each total with respect to every parameter.
pub struct TransferStep {
    pub report: TransferLossReport,
    pub grads_g: ParamGrads,
    pub grads_d: ParamGrads,
}

struct DTerms {
    l_adv: Var,
    l_dom_real: Var,
    total_d: Var,
}

struct GTerms {
    l_adv_g: Var,
    l_dom_fake: Var,
    l_rec: Var,
    total_g: Var,
}

fn d_terms(model: &TranslationModel, s: &mut Session, x: Var, fake: Var, source: &[usize]) -> Result<DTerms> {
    let real_out = model.discriminator.forward(s, x)?;
    let fake_out = model.discriminator.forward(s, fake)?;
    let g = &mut s.graph;
    let ls_real = g.log_sigmoid(real_out.src_logits);
    let real_term = g.mean(ls_real);
    let neg_fake = g.scale(fake_out.src_logits, -1.0);
    let ls_fake = g.log_sigmoid(neg_fake);
    let fake_term = g.mean(ls_fake);
    let l_adv = g.add(real_term, fake_term)?;
    let l_dom_real = g.cross_entropy(real_out.dom_logits, source)?;
    let total_d = g.weighted_sum(&[(-1.0, l_adv), (model.config.lambda_dom, l_dom_real)])?;
    Ok(DTerms {
        l_adv,
        l_dom_real,
        total_d,
    })
}

fn g_terms(model: &TranslationModel, s: &mut Session, x: Var, fake: Var, source: &[usize], target: &[usize]) -> Result<GTerms> {
    let cfg = &model.config;
    let cycled = model.generator.forward(s, fake, source)?;
    let out = model.discriminator.forward(s, fake)?;
    let g = &mut s.graph;
    let l_adv_g = match cfg.generator_adv {
        GeneratorAdv::Saturating => {
            let neg = g.scale(out.src_logits, -1.0);
            let ls = g.log_sigmoid(neg);
            g.mean(ls)
        }
        GeneratorAdv::NonSaturating => {
            let ls = g.log_sigmoid(out.src_logits);
            let m = g.mean(ls);
            g.scale(m, -1.0)
        }
    };
    let l_dom_fake = g.cross_entropy(out.dom_logits, target)?;
    let diff = g.sub(x, cycled)?;
    let ad = g.abs(diff);
    let l_rec = g.mean(ad);
    let total_g = g.weighted_sum(&[(1.0, l_adv_g), (cfg.lambda_dom, l_dom_fake), (cfg.lambda_rec, l_rec)])?;
    Ok(GTerms {
        l_adv_g,
        l_dom_fake,
        l_rec,
        total_g,
    })
}

fn report_of(s: &Session, d: &DTerms, gt: &GTerms, cfg: &TransferConfig) -> TransferLossReport {
    let v = |t| s.value(t).item();
    TransferLossReport {
        l_adv: v(d.l_adv),
        l_dom_real: v(d.l_dom_real),
        l_dom_fake: v(gt.l_dom_fake),
        l_rec: v(gt.l_rec),
        l_adv_g: v(gt.l_adv_g),
        total_g: v(gt.total_g),
        total_d: v(d.total_d),
        lambda_dom: cfg.lambda_dom,
        lambda_rec: cfg.lambda_rec,
    }
}

fn step_graph(model: &TranslationModel, x: &Tensor, source: &[usize], target: &[usize], with_grads: bool) -> Result<TransferStep> {
    let mut s = Session::new(&model.store, Mode::Train);
    let xv = s.input(x.clone());
    let fake = model.generator.forward(&mut s, xv, target)?;
    let d = d_terms(model, &mut s, xv, fake, source)?;
    let gt = g_terms(model, &mut s, xv, fake, source, target)?;
    let report = report_of(&s, &d, &gt, &model.config);
    let (grads_g, grads_d) = if with_grads {
        (s.gradients(gt.total_g)?, s.gradients(d.total_d)?)
    } else {
        (ParamGrads::default(), ParamGrads::default())
    };
    Ok(TransferStep {
        report,
        grads_g,
        grads_d,
    })
}

/// Loss values for a batch translated from `source` to `target` cameras.
pub fn transfer_losses(model: &TranslationModel, x: &Tensor, source: &[usize], target: &[usize]) -> Result<TransferLossReport> {
    Ok(step_graph(model, x, source, target, false)?.report)
}

/// Loss values and the gradients of both totals with respect to every
/// parameter, all from one graph (the fake batch is not detached).
pub fn transfer_step(model: &TranslationModel, x: &Tensor, source: &[usize], target: &[usize]) -> Result<TransferStep> {
    step_graph(model, x, source, target, true)
}

/// Discriminator update on a detached fake batch. Returns `(l_adv, l_dom_real, total_d)`.
fn d_update(model: &mut TranslationModel, opt: &mut Adam, ids: &[ParamId], x: &Tensor, source: &[usize], target: &[usize], lr: f64) -> Result<[f64; 3]> {
    let fake = model.translate(x, target)?;
    let (vals, grads) = {
        let mut s = Session::new(&model.store, Mode::Train);
        let xv = s.input(x.clone());
        let fv = s.input(fake);
        let d = d_terms(model, &mut s, xv, fv, source)?;
        let vals = [d.l_adv, d.l_dom_real, d.total_d].map(|t| s.value(t).item());
        (vals, s.gradients(d.total_d)?.restrict(ids))
    };
    opt.step(&mut model.store, &grads, lr);
    Ok(vals)
}

/// Generator update against the current discriminator. Returns `(l_dom_fake, l_rec, total_g)`.
fn g_update(model: &mut TranslationModel, opt: &mut Adam, ids: &[ParamId], x: &Tensor, source: &[usize], target: &[usize], lr: f64) -> Result<[f64; 3]> {
    let (vals, grads) = {
        let mut s = Session::new(&model.store, Mode::Train);
        let xv = s.input(x.clone());
        let fake = model.generator.forward(&mut s, xv, target)?;
        let gt = g_terms(model, &mut s, xv, fake, source, target)?;
        let vals = [gt.l_dom_fake, gt.l_rec, gt.total_g].map(|t| s.value(t).item());
        (vals, s.gradients(gt.total_g)?.restrict(ids))
    };
    opt.step(&mut model.store, &grads, lr);
    Ok(vals)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferLogRow {
    pub step: usize,
    pub l_adv: f64,
    pub l_dom_real: f64,
    pub l_dom_fake: f64,
    pub l_rec: f64,
    pub total_g: f64,
    pub total_d: f64,
}

/// Train on the manifest's train split.
pub fn train_transfer(manifest: &DatasetManifest, config: &TransferConfig) -> Result<(TranslationModel, Vec<TransferLogRow>)> {
    if manifest.n_cameras < 2 {
        return Err(Error::validation(format!(
            "train_transfer: manifest {:?} has {} camera(s); nothing to translate",
            manifest.name, manifest.n_cameras
        )));
    }
    let records: Vec<ImageRecord> = manifest.split(Split::Train).cloned().collect();
    if records.is_empty() {
        return Err(Error::validation("train_transfer: the manifest has no train records"));
    }
    let images = load_all(manifest, &records)?;
    let cameras: Vec<usize> = records.iter().map(|r| r.camera_id as usize).collect();
    let mut cfg = config.clone();
    cfg.n_cameras = manifest.n_cameras;
    train_transfer_on(&images, &cameras, &cfg)
}

/// Train on loaded `[3, S, S]` images with their camera labels.
pub fn train_transfer_on(images: &[Tensor], cameras: &[usize], cfg: &TransferConfig) -> Result<(TranslationModel, Vec<TransferLogRow>)> {
    let mut model = TranslationModel::new(cfg.clone())?;
    let g_ids = model.generator_params();
    let d_ids = model.discriminator_params();
    let mut opt_g = Adam::new(cfg.beta1, cfg.beta2);
    let mut opt_d = Adam::new(cfg.beta1, cfg.beta2);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut log = Vec::new();
    let mut step = 0usize;
    let mut iter = 0usize;
    for epoch in 0..cfg.schedule.total_epochs() {
        let lr = cfg.schedule.rate(epoch);
        let mut rng = stream(&[cfg.seed, tag::GAN_TRAIN, epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let x = Tensor::stack(&chunk.iter().map(|&i| images[i].clone()).collect::<Vec<_>>())?;
            let source: Vec<usize> = chunk.iter().map(|&i| cameras[i]).collect();
            let target: Vec<usize> = chunk.iter().map(|_| rng.random_range(0..cfg.n_cameras)).collect();
            let [l_adv, l_dom_real, total_d] = d_update(&mut model, &mut opt_d, &d_ids, &x, &source, &target, lr)?;
            iter += 1;
            if !iter.is_multiple_of(cfg.n_critic) {
                continue;
            }
            let [l_dom_fake, l_rec, total_g] = g_update(&mut model, &mut opt_g, &g_ids, &x, &source, &target, lr)?;
            if !(total_g.is_finite() && total_d.is_finite()) {
                return Err(Error::Domain {
                    op: "train_transfer",
                    msg: format!("loss diverged at step {step}"),
                });
            }
            if step.is_multiple_of(cfg.log_every) {
                log.push(TransferLogRow {
                    step,
                    l_adv,
                    l_dom_real,
                    l_dom_fake,
                    l_rec,
                    total_g,
                    total_d,
                });
            }
            step += 1;
        }
        if let Some(last) = log.last() {
            log::info!(
                "transfer epoch {epoch}: adv {:.4} dom_r {:.4} dom_f {:.4} rec {:.4} lr {lr:.2e}",
                last.l_adv,
                last.l_dom_real,
                last.l_dom_fake,
                last.l_rec
            );
        }
    }
    Ok((model, log))
}

/// Fraction of images whose most probable camera is the true one.
pub fn domain_accuracy(model: &TranslationModel, images: &[Tensor], cameras: &[usize]) -> Result<f64> {
    if images.is_empty() || images.len() != cameras.len() {
        return Err(Error::validation("domain_accuracy needs one camera label per image"));
    }
    let mut correct = 0usize;
    for (chunk, cams) in images.chunks(32).zip(cameras.chunks(32)) {
        let p = model.domain_probs(&Tensor::stack(chunk)?)?;
        let n = model.config.n_cameras;
        for (row, &c) in p.data().chunks(n).zip(cams) {
            let arg = row
                .iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > row[best] { i } else { best });
            correct += usize::from(arg == c);
        }
    }
    Ok(correct as f64 / images.len() as f64)
}

pub fn write_transfer_log(rows: &[TransferLogRow], path: &Path) -> Result<()> {
    crate::aanet::write_log_csv(rows, path)
}
