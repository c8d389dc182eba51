use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use std::hint::black_box;
use xcam_core::aanet::{AANet, AANetConfig};
use xcam_core::camera_transfer::{TransferConfig, TranslationModel};
use xcam_core::metrics::{average_precision, cmc_curve};
use xcam_core::nn::{Mode, ParamStore, Session};
use xcam_core::rng::stream;
use xcam_core::{Graph, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream(&[seed]);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_3x3");
    for &size in &[16usize, 32, 64] {
        let x = random(&[8, 16, size, size], 1);
        let w = random(&[16, 16, 3, 3], 2);
        group.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, _| {
            b.iter(|| {
                let mut g = Graph::new();
                let xv = g.constant(x.clone());
                let wv = g.constant(w.clone());
                black_box(g.conv2d(xv, wv, None, 1, 1).unwrap());
            })
        });
    }
    group.finish();
}

fn grid_sample(c: &mut Criterion) {
    let x = random(&[8, 16, 32, 32], 3);
    let theta = Tensor::new([8, 6], [0.9, 0.1, 0.05, -0.1, 0.9, 0.0].repeat(8)).unwrap();
    c.bench_function("affine_grid_sample_32", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let tv = g.constant(theta.clone());
            let grid = g.affine_grid(tv, 32, 32).unwrap();
            black_box(g.grid_sample(xv, grid).unwrap());
        })
    });
}

fn aanet_step(c: &mut Criterion) {
    let cfg = AANetConfig::toy(16, 32);
    let mut store = ParamStore::new();
    let net = AANet::new(cfg, &mut store, &mut stream(&[4])).unwrap();
    let x = random(&[8, 3, 32, 32], 5);
    c.bench_function("aanet_forward_backward_b8_32px", |b| {
        b.iter(|| {
            let mut s = Session::new(&store, Mode::Train);
            let out = net.forward(&mut s, &x).unwrap();
            let labels: Vec<usize> = (0..8).map(|i| i % 16).collect();
            let l = s.graph.cross_entropy(out.logits_g, &labels).unwrap();
            black_box(s.gradients(l).unwrap());
        })
    });
}

fn gan_translate(c: &mut Criterion) {
    let mut cfg = TransferConfig::toy(32, 1);
    cfg.n_cameras = 4;
    let model = TranslationModel::new(cfg).unwrap();
    let x = random(&[8, 3, 32, 32], 6).map(|v| 0.5 + 0.5 * v);
    c.bench_function("gan_translate_b8_32px", |b| b.iter(|| black_box(model.translate(&x, &[1; 8]).unwrap())));
}

fn metrics(c: &mut Criterion) {
    let mut rng = stream(&[7]);
    let rankings: Vec<Vec<bool>> = (0..200).map(|_| (0..1000).map(|_| rng.random_bool(0.01)).collect()).collect();
    c.bench_function("ap_cmc_200x1000", |b| {
        b.iter(|| {
            let aps: f64 = rankings.iter().filter_map(|r| average_precision(r)).sum();
            black_box((aps, cmc_curve(&rankings, 50)));
        })
    });
}

criterion_group!(benches, conv, grid_sample, aanet_step, gan_translate, metrics);
criterion_main!(benches);
