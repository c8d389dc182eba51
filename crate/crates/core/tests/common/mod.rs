//! Oracles shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xcam_core::aanet::{reid_losses, reid_step, AANet, AANetConfig, LossWeights};
use xcam_core::camera_transfer::{transfer_losses, transfer_step, TransferConfig, TranslationModel};
use xcam_core::nn::{ParamGrads, ParamId, ParamStore};
use xcam_core::retrieval::{CameraFilter, DescriptorMeta, DescriptorStore};
use xcam_core::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_RTOL: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

#[derive(Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.worst <= GRAD_RTOL
    }
}

/// Central differences on `n` scalars drawn from `ids`, compared with `analytic`.
pub fn check_params(
    store: &mut ParamStore,
    ids: &[ParamId],
    analytic: &ParamGrads,
    n: usize,
    seed: u64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> GradCheck {
    let mut slots = Vec::new();
    for &id in ids {
        for i in 0..store.get(id).numel() {
            slots.push((id, i));
        }
    }
    let picks: Vec<usize> = if slots.len() <= n {
        (0..slots.len()).collect()
    } else {
        sample(&mut rng(seed), slots.len(), n).into_vec()
    };
    let mut out = GradCheck {
        checked: 0,
        worst: 0.0,
        worst_at: String::new(),
    };
    for p in picks {
        let (id, i) = slots[p];
        let orig = store.get(id).data()[i];
        store.get_mut(id).data_mut()[i] = orig + FD_STEP;
        let up = f(store);
        store.get_mut(id).data_mut()[i] = orig - FD_STEP;
        let down = f(store);
        store.get_mut(id).data_mut()[i] = orig;
        let num = (up - down) / (2.0 * FD_STEP);
        let ana = analytic.get(id).map_or(0.0, |g| g.data()[i]);
        let e = rel_err(ana, num);
        out.checked += 1;
        if e > out.worst {
            out.worst = e;
            out.worst_at = format!("{}[{i}]: analytic {ana:e}, numeric {num:e}", store.entry(id).name);
        }
    }
    out
}

pub const GRAD_SAMPLES: usize = 240;

/// 8x8, two cameras, batch of two; the output layer is pushed off zero so
/// the reconstruction term is away from the `|0|` kink.
pub fn mini_gan(seed: u64) -> (TranslationModel, Tensor, Vec<usize>, Vec<usize>) {
    let mut cfg = TransferConfig::toy(8, seed);
    cfg.n_cameras = 2;
    cfg.width = 2;
    cfg.res_blocks = 1;
    cfg.batch_size = 2;
    let mut model = TranslationModel::new(cfg).expect("mini gan");
    let mut r = rng(seed ^ 0x9a);
    for id in model.store.weights_with_prefix("gen.out") {
        let shape = model.store.get(id).shape().to_vec();
        *model.store.get_mut(id) = Tensor::randn(shape, 0.2, &mut r);
    }
    let x = Tensor::uniform([2, 3, 8, 8], 0.0, 1.0, &mut r);
    (model, x, vec![0, 1], vec![1, 0])
}

/// Check `total_g` (`generator == true`) or `total_d` against every parameter.
pub fn gan_gradcheck(seed: u64, generator: bool) -> GradCheck {
    let (mut model, x, src, tgt) = mini_gan(seed);
    let step = transfer_step(&model, &x, &src, &tgt).expect("step");
    let grads = if generator { step.grads_g } else { step.grads_d };
    let ids: Vec<_> = model.store.ids().collect();
    let mut shell = model.clone();
    let mut store = std::mem::take(&mut model.store);
    check_params(&mut store, &ids, &grads, GRAD_SAMPLES, seed, |st| {
        shell.store = st.clone();
        let r = transfer_losses(&shell, &x, &src, &tgt).expect("losses");
        if generator { r.total_g } else { r.total_d }
    })
}

/// 8x8 input, two identities, batch of four. Alignment biases are jittered
/// so sampling points do not sit on pixel centres.
pub fn aanet_gradcheck(seed: u64) -> GradCheck {
    let mut cfg = AANetConfig::toy(2, 8);
    cfg.stem_channels = 3;
    cfg.width = 2;
    cfg.embedding_dim = 4;
    cfg.loc_channels = 2;
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let net = AANet::new(cfg, &mut store, &mut r).expect("mini aanet");
    let ids: Vec<_> = store.ids().collect();
    for &id in &ids {
        if store.entry(id).name.contains(".theta.") {
            let t = store.get_mut(id);
            for v in t.data_mut() {
                *v += 0.05 * (r.random::<f64>() - 0.5);
            }
        }
    }
    let x = Tensor::randn([4, 3, 8, 8], 1.0, &mut r);
    let labels = [0, 1, 1, 0];
    let w = LossWeights::default();
    let step = reid_step(&net, &store, &x, &labels, w).expect("step");
    check_params(&mut store, &ids, &step.grads, GRAD_SAMPLES, seed, |st| {
        reid_losses(&net, st, &x, &labels, w).expect("losses")[3]
    })
}

/// Random retrieval problem with at most 50 queries and 200 gallery items.
pub struct Instance {
    pub q: Vec<(Vec<i32>, u32, u32)>,
    pub g: Vec<(Vec<i32>, u32, u32)>,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let nq = r.random_range(1..=50);
    let ng = r.random_range(1..=200);
    let dim = r.random_range(1..=6);
    let ids = r.random_range(1..=12);
    let cams = r.random_range(1..=4);
    // small integer entries force distance ties
    let item = |r: &mut rand_chacha::ChaCha8Rng| {
        let v: Vec<i32> = (0..dim).map(|_| r.random_range(-2..=2)).collect();
        (v, r.random_range(0..ids), r.random_range(0..cams))
    };
    Instance {
        q: (0..nq).map(|_| item(&mut r)).collect(),
        g: (0..ng).map(|_| item(&mut r)).collect(),
    }
}

pub fn descriptor_store(items: &[(Vec<i32>, u32, u32)]) -> DescriptorStore {
    let mut s = DescriptorStore::new(items[0].0.len(), serde_json::Value::Null);
    for (i, (v, id, cam)) in items.iter().enumerate() {
        let row: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        let meta = DescriptorMeta {
            vehicle_id: *id,
            camera_id: *cam,
            path: PathBuf::from(format!("{i}.png")),
        };
        s.push(&row, meta).unwrap();
    }
    s
}

/// Brute force: integer squared distances, selection sort with index tie-break,
/// AP as the mean of precision at each hit.
pub fn brute_force_metrics(inst: &Instance, filter: CameraFilter, max_rank: usize) -> (f64, Vec<f64>, usize) {
    let mut aps = Vec::new();
    let mut firsts = Vec::new();
    for (qv, qid, qcam) in &inst.q {
        let mut cand: Vec<(i64, usize)> = inst
            .g
            .iter()
            .enumerate()
            .filter(|(_, (_, gid, gcam))| filter == CameraFilter::None || gid != qid || gcam != qcam)
            .map(|(i, (gv, _, _))| (qv.iter().zip(gv).map(|(a, b)| ((a - b) as i64).pow(2)).sum(), i))
            .collect();
        let mut order = Vec::new();
        while !cand.is_empty() {
            let mut best = 0;
            for k in 1..cand.len() {
                if cand[k] < cand[best] {
                    best = k;
                }
            }
            order.push(cand.remove(best).1);
        }
        let rel: Vec<bool> = order.iter().map(|&i| inst.g[i].1 == *qid).collect();
        let n_rel = rel.iter().filter(|&&b| b).count();
        if n_rel == 0 {
            continue;
        }
        let mut hits = 0;
        let mut sum = 0.0;
        for (k, &b) in rel.iter().enumerate() {
            if b {
                hits += 1;
                sum += hits as f64 / (k + 1) as f64;
            }
        }
        aps.push(sum / n_rel as f64);
        firsts.push(rel.iter().position(|&b| b).unwrap() + 1);
    }
    let map = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
    let n = firsts.len().max(1) as f64;
    let cmc = (1..=max_rank).map(|k| firsts.iter().filter(|&&f| f <= k).count() as f64 / n).collect();
    (map, cmc, inst.q.len() - aps.len())
}

