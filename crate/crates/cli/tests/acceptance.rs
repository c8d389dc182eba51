//! One PASS/FAIL line per acceptance criterion. Criteria 6-8 train the full
//! toy pipeline for three seeds with and without camera transfer, so this
//! target takes a while.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use xcam_cli::{run_pipeline, ExperimentConfig, PipelineOutcome};
use xcam_core::aanet::{apply_attention, attention_mask, ce_loss, total_loss, AANet, AANetConfig, AlignmentModule, LossWeights};
use xcam_core::camera_transfer::{adversarial_loss, default_target_camera, domain_loss, reconstruction_loss};
use xcam_core::dataset::{load_manifest, ToyGenSpec};
use xcam_core::metrics::{average_precision, cmc_curve, evaluate_fixed, EvalReport};
use xcam_core::nn::{Mode, ParamStore, Session};
use xcam_core::retrieval::{fuse, CameraFilter};
use xcam_core::{Graph, Tensor};

const LOSS_TOL: f64 = 1e-6;
const LINEARITY_TOL: f64 = 1e-12;
const ALIGN_TOL: f64 = 1e-6;
const MASK_SUM_TOL: f64 = 1e-5;
const FUSION_TOL: f64 = 1e-12;
const MIN_DOMAIN_ACCURACY: f64 = 0.90;
const BRIGHTNESS_TOL: f64 = 2.0;
const MAX_PIPELINE_SECS: f64 = 30.0 * 60.0;
const MAP_SLACK: f64 = 0.01;
const SEEDS: [u64; 3] = [1, 2, 3];

struct Board {
    lines: Vec<String>,
    hard_failures: Vec<String>,
}

impl Board {
    fn record(&mut self, id: &str, hard: bool, pass: bool, what: &str, detail: String) {
        let tag = match (pass, hard) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "SOFT-FAIL",
        };
        let line = format!("{tag:9} [{id}] {what}: {detail}");
        println!("{line}");
        if hard && !pass {
            self.hard_failures.push(line.clone());
        }
        self.lines.push(line);
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn losses(b: &mut Board) {
    let adv = adversarial_loss(&[0.5], &[0.5], None).unwrap();
    b.record("1a", true, close(adv, -1.386294, LOSS_TOL), "adversarial(0.5, 0.5)", format!("{adv:.9}"));
    let dom = domain_loss(&[0.25; 4], 1).unwrap().value;
    b.record("1b", true, close(dom, 1.386294, LOSS_TOL), "domain loss, uniform over 4", format!("{dom:.9}"));
    let x = Tensor::randn([2, 3, 8, 8], 1.0, &mut common::rng(1));
    let rec = reconstruction_loss(&x, &x).unwrap();
    b.record("1c", true, rec == 0.0, "rec(x, x)", format!("{rec:e}"));
    let worst_ce = [2usize, 4, 10, 576]
        .iter()
        .map(|&n| (ce_loss(&Tensor::full([2, n], 1.5), &[0, n - 1]).unwrap() - (n as f64).ln()).abs())
        .fold(0.0, f64::max);
    b.record("1d", true, worst_ce <= LOSS_TOL, "CE with equal logits = ln n", format!("max error {worst_ce:e}"));
    let mut r = common::rng(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let w = LossWeights {
            lambda1: r.random_range(0.0..3.0),
            lambda2: r.random_range(0.0..3.0),
        };
        let v: [f64; 6] = std::array::from_fn(|_| r.random_range(0.0..10.0));
        let sum = total_loss(v[0] + v[3], v[1] + v[4], v[2] + v[5], w);
        let parts = total_loss(v[0], v[1], v[2], w) + total_loss(v[3], v[4], v[5], w);
        let direct = v[0] + w.lambda1 * v[1] + w.lambda2 * v[2];
        worst = worst.max((sum - parts).abs()).max((total_loss(v[0], v[1], v[2], w) - direct).abs());
    }
    b.record("1e", true, worst <= LINEARITY_TOL, "total loss linear over 100 draws", format!("max error {worst:e}"));
}

fn gradients(b: &mut Board) {
    for (id, name, check) in [
        ("2a", "GAN total_g vs finite differences", common::gan_gradcheck(21, true)),
        ("2b", "GAN total_d vs finite differences", common::gan_gradcheck(22, false)),
        ("2c", "AANet total vs finite differences", common::aanet_gradcheck(23)),
    ] {
        let ok = check.passed() && check.checked >= 200;
        b.record(id, true, ok, name, format!("{} params, worst rel {:.2e} at {}", check.checked, check.worst, check.worst_at));
    }
}

fn warp(x: &Tensor, theta: [f64; 6]) -> Tensor {
    let (n, _, h, w) = x.dims4().unwrap();
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let t = g.constant(Tensor::new([n, 6], theta.repeat(n)).unwrap());
    let grid = g.affine_grid(t, h, w).unwrap();
    let y = g.grid_sample(xv, grid).unwrap();
    g.value(y).clone()
}

fn alignment_and_attention(b: &mut Board) {
    let mut store = ParamStore::new();
    let m = AlignmentModule::new(&mut store, "a", 3, 4, &mut common::rng(3));
    let x = Tensor::randn([2, 3, 6, 6], 1.0, &mut common::rng(4));
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.input(x.clone());
    let (y, _) = m.align(&mut s, xv).unwrap();
    let err = s.value(y).max_abs_diff(&x);
    b.record("3a", true, err <= ALIGN_TOL, "identity alignment", format!("max error {err:e}"));

    let grid = Tensor::new([1, 1, 4, 4], (1..=16).map(f64::from).collect()).unwrap();
    let shifted = warp(&grid, [1.0, 0.0, 0.5, 0.0, 1.0, 0.0]);
    let want: Vec<f64> = (0..16).map(|i| if i % 4 == 3 { 0.0 } else { (i + 2) as f64 }).collect();
    let err = shifted.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    b.record("3b", true, err <= ALIGN_TOL, "one-cell translation on 4x4", format!("max error {err:e}"));

    let small = Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let turned = warp(&small, [-1.0, 0.0, 0.0, 0.0, -1.0, 0.0]);
    b.record("3c", true, turned.data() == [4.0, 3.0, 2.0, 1.0], "half turn on 2x2", format!("{:?}", turned.data()));

    let mut r = common::rng(5);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let c = 1 + i % 9;
        let f = Tensor::randn([c, 3, 3], 5.0, &mut r);
        let mask = attention_mask(&f, &Tensor::randn([c, c], 1.0, &mut r), &Tensor::randn([c], 1.0, &mut r)).unwrap();
        worst = worst.max((mask.iter().sum::<f64>() - 1.0).abs());
    }
    b.record("3d", true, worst <= MASK_SUM_TOL, "attention masks sum to 1 (100 inputs)", format!("max deviation {worst:e}"));

    let f = Tensor::randn([1, 4, 2, 2], 1.0, &mut r);
    let mut g = Graph::new();
    let fv = g.constant(f.clone());
    let one_hot = g.constant(Tensor::new([1, 4], vec![0.0, 0.0, 1.0, 0.0]).unwrap());
    let uniform = g.constant(Tensor::full([1, 4], 0.25));
    let a = apply_attention(&mut g, fv, one_hot).unwrap();
    let u = apply_attention(&mut g, fv, uniform).unwrap();
    let one_hot_ok = g.value(a).data().iter().enumerate().all(|(i, &v)| v == if i / 4 == 2 { f.data()[i] } else { 0.0 });
    let uniform_ok = g.value(u).data().iter().zip(f.data()).all(|(&v, &x)| v == 0.25 * x);
    b.record("3e", true, one_hot_ok && uniform_ok, "apply_attention one-hot and uniform", format!("one-hot {one_hot_ok}, uniform {uniform_ok}"));
}

fn shapes(b: &mut Board) {
    let cfg = AANetConfig::full(8);
    let d = cfg.embedding_dim;
    let mut store = ParamStore::new();
    let net = AANet::new(cfg, &mut store, &mut common::rng(6)).unwrap();
    let x = Tensor::uniform([1, 3, 224, 224], 0.0, 1.0, &mut common::rng(7));
    let mut s = Session::new(&store, Mode::Eval);
    let xv = s.input(x.clone());
    let stem = net.stem(&mut s, xv).unwrap();
    let stem_shape = s.value(stem).shape().to_vec();
    b.record("4a", true, stem_shape == [1, 64, 112, 112], "stem output for a 224 input", format!("{stem_shape:?} (NCHW)"));
    let (g, u, l) = net.features(&store, &x).unwrap();
    let shapes = [g.shape().to_vec(), u.shape().to_vec(), l.shape().to_vec()];
    let ok = shapes.iter().all(|s| s == &[1, d]);
    b.record("4b", true, ok, "branch features are 1x1xd", format!("{shapes:?}, d = {d}"));
    let fused = fuse(g.data(), u.data(), l.data(), 0.5).unwrap();
    b.record("4c", true, fused.len() == 3 * d, "fused descriptor length", format!("{} (3d = {})", fused.len(), 3 * d));

    let mut r = common::rng(8);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = r.random_range(1..64);
        let alpha: f64 = r.random();
        let v: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| r.random_range(-10.0..10.0)).collect()).collect();
        let f = fuse(&v[0], &v[1], &v[2], alpha).unwrap();
        for i in 0..n {
            worst = worst
                .max((f[i] - alpha * v[0][i]).abs())
                .max((f[n + i] - (1.0 - alpha) * v[1][i]).abs())
                .max((f[2 * n + i] - (1.0 - alpha) * v[2][i]).abs());
        }
    }
    b.record("4d", true, worst <= FUSION_TOL, "fusion vs hand arithmetic (20 cases)", format!("max error {worst:e}"));
}

fn metrics(b: &mut Board) {
    let mut mismatches = 0;
    for seed in 0..100u64 {
        let inst = common::random_instance(1000 + seed);
        let filter = if seed % 2 == 0 { CameraFilter::CrossCamera } else { CameraFilter::None };
        let rep = evaluate_fixed(&common::descriptor_store(&inst.q), &common::descriptor_store(&inst.g), filter, 50, "m").unwrap();
        let (map, cmc, _) = common::brute_force_metrics(&inst, filter, 50);
        let same = rep.map.to_bits() == map.to_bits() && rep.cmc.iter().zip(&cmc).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            mismatches += 1;
        }
    }
    b.record("5a", true, mismatches == 0, "metrics vs brute force (100 instances)", format!("{mismatches} mismatches"));
    let ap = average_precision(&[true, false, true]).unwrap();
    let cmc = cmc_curve(&[vec![true, false, false], vec![false, false, true]], 3);
    let ok = close(ap, 0.833333, LOSS_TOL) && cmc == [0.5, 0.5, 1.0];
    b.record("5b", true, ok, "hand cases AP and CMC", format!("AP {ap:.6}, CMC {cmc:?}"));
}

#[derive(serde::Deserialize)]
struct Diagnostics {
    domain_accuracy: f64,
    brightness_shift: Vec<Vec<f64>>,
}

fn toy_config(seed: u64, use_transfer: bool) -> ExperimentConfig {
    let overrides = [format!("seed={seed}"), format!("use_transfer={use_transfer}")];
    ExperimentConfig::from_toml("", &overrides).unwrap()
}

fn by_method<'a>(out: &'a PipelineOutcome, suffix: &str) -> &'a EvalReport {
    out.reports.iter().find(|r| r.method.ends_with(suffix)).unwrap()
}

fn transfer_efficacy(b: &mut Board, seed: u64, run: &Path, secs: f64) {
    let diag: Diagnostics = serde_json::from_str(&std::fs::read_to_string(run.join("transfer/diagnostics.json")).unwrap()).unwrap();
    b.record(
        "6a",
        true,
        diag.domain_accuracy >= MIN_DOMAIN_ACCURACY,
        &format!("seed {seed}: D_dom held-out accuracy"),
        format!("{:.4} (>= {MIN_DOMAIN_ACCURACY})", diag.domain_accuracy),
    );
    let spec: ToyGenSpec = serde_json::from_str(&std::fs::read_to_string(run.join("data/toygen.json")).unwrap()).unwrap();
    let manifest = load_manifest(&run.join("data/manifest.jsonl")).unwrap();
    let target = default_target_camera(&manifest);
    let offset = |c: usize| spec.camera_styles[c].brightness_offset as f64;
    // brightness of a translated camera-s image, on the offset scale
    let levels: Vec<f64> = (0..spec.n_cameras).map(|s| offset(s) + diag.brightness_shift[s][target]).collect();
    let worst = levels.iter().map(|l| (l - offset(target)).abs()).fold(0.0, f64::max);
    b.record(
        "6b",
        true,
        worst <= BRIGHTNESS_TOL,
        &format!("seed {seed}: translated brightness vs camera {target} offset {}", offset(target)),
        format!("per source camera {levels:.2?}, worst gap {worst:.2} (<= {BRIGHTNESS_TOL})"),
    );
    b.record(
        "6c",
        true,
        secs <= MAX_PIPELINE_SECS,
        &format!("seed {seed}: full pipeline runtime at 64x64"),
        format!("{secs:.0} s (<= {MAX_PIPELINE_SECS:.0} s)"),
    );
}

fn toy_runs(b: &mut Board, root: &Path) {
    let mut with = Vec::new();
    let mut without = Vec::new();
    for seed in SEEDS {
        let dir = root.join(format!("seed{seed}"));
        let t = Instant::now();
        let out = run_pipeline(&toy_config(seed, true), &dir.join("transfer")).unwrap();
        transfer_efficacy(b, seed, &dir.join("transfer"), t.elapsed().as_secs_f64());
        let plain = run_pipeline(&toy_config(seed, false), &dir.join("plain")).unwrap();
        for (label, o) in [("with transfer", &out), ("without transfer", &plain)] {
            let fused = by_method(o, "-All").map;
            let branches = ["-global", "-Part1", "-Part2"].map(|m| by_method(o, m).map);
            let best = branches.iter().cloned().fold(f64::MIN, f64::max);
            b.record(
                "8",
                true,
                fused >= best - MAP_SLACK,
                &format!("seed {seed} {label}: fused mAP vs best branch"),
                format!("fused {fused:.4}, branches {branches:.4?}"),
            );
        }
        with.push(by_method(&out, "-All").map);
        without.push(by_method(&plain, "-All").map);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mw, mo) = (mean(&with), mean(&without));
    b.record(
        "7",
        false,
        mw >= mo - MAP_SLACK,
        "mean mAP with vs without transfer (3 seeds)",
        format!("with {mw:.4} {with:.4?}, without {mo:.4} {without:.4?}"),
    );
}

fn reproducibility(b: &mut Board, root: &Path) {
    let cfg = ExperimentConfig::from_toml(
        "",
        &[
            "toy_ids=8", "toy_per=2", "toy_size=16", "gan_epochs_constant=1", "gan_epochs_decay=1", "gan_width=4",
            "reid_epochs_high=2", "reid_epochs_low=1", "reid_width=8", "reid_stem_channels=8", "embedding_dim=16",
        ]
        .map(String::from),
    )
    .unwrap();
    let a = run_pipeline(&cfg, &root.join("repro-a")).unwrap();
    let b2 = run_pipeline(&cfg, &root.join("repro-b")).unwrap();
    let json = |o: &PipelineOutcome| o.reports.iter().map(|r| r.to_json().unwrap()).collect::<Vec<_>>();
    let same = a.reports.len() == 4 && json(&a) == json(&b2);
    let resumed = run_pipeline(&cfg, &root.join("repro-a")).unwrap();
    let resumed_same = resumed.stages_run.is_empty() && json(&resumed) == json(&a);
    b.record(
        "9",
        true,
        same && resumed_same,
        "pipeline rerun reproduces every EvalReport",
        format!("fresh rerun identical: {same}, resumed run identical: {resumed_same}"),
    );
}

fn finish(b: Board) {
    println!("\n{} checks, {} hard failures", b.lines.len(), b.hard_failures.len());
    assert!(b.hard_failures.is_empty(), "failed:\n{}", b.hard_failures.join("\n"));
}

fn board() -> Board {
    Board {
        lines: Vec::new(),
        hard_failures: Vec::new(),
    }
}

#[test]
fn acceptance() {
    let mut b = board();
    losses(&mut b);
    gradients(&mut b);
    alignment_and_attention(&mut b);
    shapes(&mut b);
    metrics(&mut b);
    let root = tempfile::tempdir().unwrap();
    reproducibility(&mut b, root.path());
    finish(b);
}

/// Full toy training: three seeds, with and without transfer. Takes hours
/// on one core, so it only runs when asked for with `--ignored`.
#[test]
#[ignore = "trains six full toy pipelines; run with --ignored"]
fn acceptance_toy_training() {
    let mut b = board();
    let root = tempfile::tempdir().unwrap();
    toy_runs(&mut b, root.path());
    finish(b);
}
