use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Linear, LrSchedule, Mode, ParamId, ParamStore, Session};
use crate::rng::{stream, tag};
use crate::tensor::Tensor;

const LEAKY_SLOPE: f64 = 0.01;

/// One-hot camera label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CameraCode {
    pub n_cameras: usize,
    pub camera: usize,
}

impl CameraCode {
    pub fn new(camera: usize, n_cameras: usize) -> Result<Self> {
        if camera >= n_cameras {
            return Err(Error::validation(format!("camera {camera} outside {n_cameras} cameras")));
        }
        Ok(CameraCode { n_cameras, camera })
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_cameras];
        v[self.camera] = 1.0;
        v
    }
}

/// `N` constant planes per image: plane `k` is 1 where `codes[b] == k`.
pub fn code_planes(codes: &[usize], n_cameras: usize, h: usize, w: usize) -> Tensor {
    let mut data = vec![0.0; codes.len() * n_cameras * h * w];
    for (b, &c) in codes.iter().enumerate() {
        let start = (b * n_cameras + c) * h * w;
        data[start..start + h * w].fill(1.0);
    }
    Tensor::new([codes.len(), n_cameras, h, w], data).expect("length matches shape")
}

/// Generator side of the adversarial term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorAdv {
    /// Minimize `E[log(1 - D(G(x, c)))]`, the literal minimax objective.
    Saturating,
    /// Minimize `-E[log D(G(x, c))]`; same fixed point, stronger early gradients.
    NonSaturating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub image_size: usize,
    /// Set from the training manifest.
    pub n_cameras: usize,
    /// Capacity multiplier: base channel count of G and D.
    pub width: usize,
    pub res_blocks: usize,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub lambda_dom: f64,
    pub lambda_rec: f64,
    /// Discriminator updates per generator update.
    pub n_critic: usize,
    pub generator_adv: GeneratorAdv,
    /// Log one CSV row every this many generator steps.
    pub log_every: usize,
    pub seed: u64,
}

impl TransferConfig {
    /// Adam 1e-4 (0.5, 0.999), 10 constant + 10 decaying epochs, batch 16,
    /// domain weight 1, reconstruction weight 10.
    pub fn toy(image_size: usize, seed: u64) -> Self {
        TransferConfig {
            image_size,
            n_cameras: 0,
            width: 16,
            res_blocks: 2,
            schedule: LrSchedule::LinearDecay {
                base: 1e-4,
                constant_epochs: 10,
                decay_epochs: 10,
            },
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 16,
            lambda_dom: 1.0,
            lambda_rec: 10.0,
            n_critic: 1,
            generator_adv: GeneratorAdv::NonSaturating,
            log_every: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cameras < 2 {
            return Err(Error::validation(format!(
                "camera transfer needs at least 2 cameras, found {}",
                self.n_cameras
            )));
        }
        if self.image_size < 8 || !self.image_size.is_power_of_two() {
            return Err(Error::validation(format!(
                "transfer image_size {} must be a power of two >= 8",
                self.image_size
            )));
        }
        if self.width == 0 || self.batch_size == 0 || self.log_every == 0 || self.n_critic == 0 {
            return Err(Error::validation("width, batch_size, n_critic and log_every must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    a: Conv2d,
    b: Conv2d,
}

/// Residual image-to-image generator. The output convolution starts at zero,
/// so an untrained generator is the identity map.
#[derive(Clone, Debug)]
pub struct Generator {
    n_cameras: usize,
    enc: Conv2d,
    down: Conv2d,
    blocks: Vec<ResBlock>,
    up: Conv2d,
    out: Conv2d,
}

impl Generator {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &TransferConfig, rng: &mut R) -> Self {
        let w = cfg.width;
        let enc = Conv2d::same(store, "gen.enc", 3 + cfg.n_cameras, w, 3, 1, rng);
        let down = Conv2d::same(store, "gen.down", w, 2 * w, 3, 2, rng);
        let blocks = (0..cfg.res_blocks)
            .map(|i| ResBlock {
                a: Conv2d::same(store, &format!("gen.res{i}.a"), 2 * w, 2 * w, 3, 1, rng),
                b: Conv2d::same(store, &format!("gen.res{i}.b"), 2 * w, 2 * w, 3, 1, rng),
            })
            .collect();
        let up = Conv2d::same(store, "gen.up", 2 * w, w, 3, 1, rng);
        let out = Conv2d::same(store, "gen.out", w, 3, 3, 1, rng);
        store.get_mut(out.weight).data_mut().fill(0.0);
        Generator {
            n_cameras: cfg.n_cameras,
            enc,
            down,
            blocks,
            up,
            out,
        }
    }

    /// `x: [B, 3, H, W]` translated towards `targets[b]`.
    pub fn forward(&self, s: &mut Session, x: Var, targets: &[usize]) -> Result<Var> {
        let (b, _, h, w) = s.graph.value(x).dims4()?;
        if targets.len() != b {
            return Err(Error::shape(format!("{} target codes for batch {b}", targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= self.n_cameras) {
            return Err(Error::validation(format!("target camera {t} outside {} cameras", self.n_cameras)));
        }
        let planes = s.input(code_planes(targets, self.n_cameras, h, w));
        let inp = s.graph.concat(&[x, planes])?;
        let e = self.enc.forward(s, inp)?;
        let e = s.graph.relu(e);
        let d = self.down.forward(s, e)?;
        let mut r = s.graph.relu(d);
        for blk in &self.blocks {
            let t = blk.a.forward(s, r)?;
            let t = s.graph.relu(t);
            let t = blk.b.forward(s, t)?;
            r = s.graph.add(r, t)?;
        }
        let u = s.graph.upsample2x(r)?;
        let u = self.up.forward(s, u)?;
        let u = s.graph.relu(u);
        let delta = self.out.forward(s, u)?;
        s.graph.add(x, delta)
    }
}

/// Shared convolutional trunk with a patch real/fake head and a camera head.
#[derive(Clone, Debug)]
pub struct Discriminator {
    trunk: Vec<Conv2d>,
    src: Conv2d,
    dom: Linear,
}

/// Discriminator logits: patch scores `[B, 1, h, w]` and camera logits `[B, N]`.
pub struct DiscOut {
    pub src_logits: Var,
    pub dom_logits: Var,
}

impl Discriminator {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &TransferConfig, rng: &mut R) -> Self {
        let w = cfg.width;
        let chans = [3, w, 2 * w, 4 * w];
        let trunk = (0..3)
            .map(|i| Conv2d::same(store, &format!("disc.conv{i}"), chans[i], chans[i + 1], 3, 2, rng))
            .collect();
        Discriminator {
            trunk,
            src: Conv2d::same(store, "disc.src", 4 * w, 1, 3, 1, rng),
            dom: Linear::new(store, "disc.dom", 4 * w, cfg.n_cameras, rng),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<DiscOut> {
        let mut h = x;
        for c in &self.trunk {
            h = c.forward(s, h)?;
            h = s.graph.leaky_relu(h, LEAKY_SLOPE);
        }
        let src_logits = self.src.forward(s, h)?;
        let pooled = s.graph.global_avg_pool(h)?;
        let dom_logits = self.dom.forward(s, pooled)?;
        Ok(DiscOut { src_logits, dom_logits })
    }
}

/// Generator and discriminator with their parameters.
#[derive(Clone, Debug)]
pub struct TranslationModel {
    pub config: TransferConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub store: ParamStore,
}

impl TranslationModel {
    pub fn new(config: TransferConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = stream(&[config.seed, tag::GAN_INIT]);
        let generator = Generator::new(&mut store, &config, &mut rng);
        let discriminator = Discriminator::new(&mut store, &config, &mut rng);
        Ok(TranslationModel {
            config,
            generator,
            discriminator,
            store,
        })
    }

    pub fn generator_params(&self) -> Vec<ParamId> {
        self.store.weights_with_prefix("gen.")
    }

    pub fn discriminator_params(&self) -> Vec<ParamId> {
        self.store.weights_with_prefix("disc.")
    }

    fn check_images(&self, x: &Tensor) -> Result<()> {
        let s = self.config.image_size;
        match x.shape() {
            [b, 3, h, w] if *b > 0 && *h == s && *w == s => Ok(()),
            other => Err(Error::shape(format!("expected images [B, 3, {s}, {s}], got {other:?}"))),
        }
    }

    /// Inference-mode translation of a batch towards `targets`.
    pub fn translate(&self, x: &Tensor, targets: &[usize]) -> Result<Tensor> {
        self.check_images(x)?;
        let mut s = Session::new(&self.store, Mode::Eval);
        let xv = s.input(x.clone());
        let y = self.generator.forward(&mut s, xv, targets)?;
        Ok(s.value(y).clone())
    }

    /// Camera probabilities `[B, N]` from the camera head.
    pub fn domain_probs(&self, x: &Tensor) -> Result<Tensor> {
        self.check_images(x)?;
        let mut s = Session::new(&self.store, Mode::Eval);
        let xv = s.input(x.clone());
        let o = self.discriminator.forward(&mut s, xv)?;
        let p = s.graph.softmax(o.dom_logits)?;
        Ok(s.value(p).clone())
    }

    /// Real/fake probability per image (patch scores averaged after the sigmoid).
    pub fn source_probs(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.check_images(x)?;
        let mut s = Session::new(&self.store, Mode::Eval);
        let xv = s.input(x.clone());
        let o = self.discriminator.forward(&mut s, xv)?;
        let p = s.graph.sigmoid(o.src_logits);
        let t = s.value(p);
        let per = t.numel() / t.shape()[0];
        Ok(t.data().chunks(per).map(|c| c.iter().sum::<f64>() / per as f64).collect())
    }
}

/// Kind tag stored in transfer checkpoints.
pub const CHECKPOINT_KIND: &str = "camera_transfer";

impl TranslationModel {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::nn::checkpoint::save(path, CHECKPOINT_KIND, &serde_json::to_value(&self.config)?, &self.store)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let ck = crate::nn::checkpoint::load(path)?;
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!(
                "{} holds a {:?} model, expected {CHECKPOINT_KIND:?}",
                path.display(),
                ck.kind
            )));
        }
        let config: TransferConfig = serde_json::from_value(ck.config)?;
        let mut m = TranslationModel::new(config)?;
        m.store.load_from(&ck.params)?;
        Ok(m)
    }
}

