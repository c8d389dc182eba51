use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::AttentionModule;
use super::backbone::{Backbone, BlockKind};
use super::stn::AlignmentModule;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d, Linear, Mode, ParamStore, Session};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AANetConfig {
    /// Square input side; a multiple of 4.
    pub image_size: usize,
    pub n_identities: usize,
    pub stem_channels: usize,
    /// Base channel count of the branch backbones (stages use 1x and 2x).
    pub width: usize,
    pub block: BlockKind,
    pub blocks_per_stage: usize,
    /// Per-branch feature length d.
    pub embedding_dim: usize,
    pub loc_channels: usize,
    pub use_alignment: bool,
    pub use_attention: bool,
    /// Learning-rate multiplier of the alignment modules.
    pub align_lr_scale: f64,
}

impl AANetConfig {
    /// Full geometry: 224 input, 64-channel stem, d = 4096.
    pub fn full(n_identities: usize) -> Self {
        AANetConfig {
            image_size: 224,
            n_identities,
            stem_channels: 64,
            width: 64,
            block: BlockKind::Bottleneck,
            blocks_per_stage: 2,
            embedding_dim: 4096,
            loc_channels: 32,
            use_alignment: true,
            use_attention: true,
            align_lr_scale: 0.01,
        }
    }

    /// Desk-scale geometry.
    pub fn toy(n_identities: usize, image_size: usize) -> Self {
        AANetConfig {
            image_size,
            n_identities,
            stem_channels: 16,
            width: 16,
            block: BlockKind::Basic,
            blocks_per_stage: 1,
            embedding_dim: 64,
            loc_channels: 8,
            use_alignment: true,
            use_attention: true,
            align_lr_scale: 0.01,
        }
    }

    /// Rigid parts: no alignment and no attention.
    pub fn rigid(mut self) -> Self {
        self.use_alignment = false;
        self.use_attention = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.image_size < 8 || !self.image_size.is_multiple_of(4) {
            return bad(format!("image_size {} must be a multiple of 4 and >= 8", self.image_size));
        }
        if self.n_identities < 1 {
            return bad("n_identities must be positive".into());
        }
        if self.embedding_dim < 2 || !self.embedding_dim.is_multiple_of(2) {
            return bad(format!("embedding_dim {} must be even", self.embedding_dim));
        }
        if self.stem_channels == 0 || self.width == 0 || self.loc_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        Ok(())
    }

    pub fn stem_size(&self) -> usize {
        self.image_size / 2
    }

    fn stages(&self) -> [(usize, usize); 2] {
        [(self.width, 2), (2 * self.width, 2)]
    }
}

/// Backbone, optional attention, then GAP + FC + BN.
#[derive(Clone, Debug)]
struct Stream {
    backbone: Backbone,
    attention: Option<AttentionModule>,
    fc: Linear,
    bn: BatchNorm,
}

struct StreamOut {
    feature: Var,
    mask: Option<Var>,
}

impl Stream {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &AANetConfig, out_dim: usize, rng: &mut R) -> Self {
        let backbone = Backbone::new(
            store,
            &format!("{name}.backbone"),
            cfg.block,
            cfg.stem_channels,
            &cfg.stages(),
            cfg.blocks_per_stage,
            rng,
        );
        let c = backbone.out_channels;
        Stream {
            attention: cfg
                .use_attention
                .then(|| AttentionModule::new(store, &format!("{name}.attention"), c)),
            fc: Linear::new(store, &format!("{name}.fc"), c, out_dim, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), out_dim),
            backbone,
        }
    }

    fn forward(&self, s: &mut Session, x: Var) -> Result<StreamOut> {
        let f = self.backbone.forward(s, x)?;
        let (f, mask) = match &self.attention {
            Some(a) => {
                let (m, out) = a.forward(s, f)?;
                (out, Some(m))
            }
            None => (f, None),
        };
        let p = s.graph.global_avg_pool(f)?;
        let e = self.fc.forward(s, p)?;
        Ok(StreamOut {
            feature: self.bn.forward(s, e)?,
            mask,
        })
    }
}

#[derive(Clone, Debug)]
struct LocalBranch {
    align: Option<AlignmentModule>,
    stream: Stream,
    classifier: Linear,
}

/// Graph handles of one forward pass. Features are `[N, d]`, i.e. one
/// `1x1xd` vector per image; logits are `[N, n_identities]`.
pub struct AANetOutput {
    pub f_g: Var,
    pub f_u: Var,
    pub f_l: Var,
    pub logits_g: Var,
    pub logits_u: Var,
    pub logits_l: Var,
    pub stem: Var,
    pub upper_input: Var,
    pub lower_input: Var,
    /// Attention masks: global streams, upper, lower (when enabled).
    pub masks: Vec<Var>,
    /// Affine parameters of the upper and lower alignment modules (when enabled).
    pub thetas: Vec<Var>,
}

/// Global two-stream branch plus aligned and attended upper/lower branches
/// over a shared stem.
#[derive(Clone, Debug)]
pub struct AANet {
    pub config: AANetConfig,
    stem_conv: Conv2d,
    stem_bn: BatchNorm,
    global: [Stream; 2],
    global_classifier: Linear,
    upper: LocalBranch,
    lower: LocalBranch,
}

impl AANet {
    /// Build and register all parameters in `store`.
    pub fn new<R: Rng + ?Sized>(config: AANetConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.embedding_dim;
        let n = config.n_identities;
        let stem_conv = Conv2d::new(store, "stem.conv", 3, config.stem_channels, 7, 2, 3, false, rng);
        let stem_bn = BatchNorm::new(store, "stem.bn", config.stem_channels);
        let global = [
            Stream::new(store, "global.0", &config, d / 2, rng),
            Stream::new(store, "global.1", &config, d / 2, rng),
        ];
        let global_classifier = Linear::with_std(store, "global.classifier", d, n, 0.01, rng);
        let mut local = |name: &str, rng: &mut R| LocalBranch {
            align: config
                .use_alignment
                .then(|| AlignmentModule::new(store, &format!("{name}.align"), config.stem_channels, config.loc_channels, rng)),
            stream: Stream::new(store, name, &config, d, rng),
            classifier: Linear::with_std(store, &format!("{name}.classifier"), d, n, 0.01, rng),
        };
        let upper = local("upper", rng);
        let lower = local("lower", rng);
        Ok(AANet {
            config,
            stem_conv,
            stem_bn,
            global,
            global_classifier,
            upper,
            lower,
        })
    }

    /// Trainable parameters of the alignment modules.
    pub fn alignment_params(store: &ParamStore) -> Vec<crate::nn::ParamId> {
        let mut ids = store.weights_with_prefix("upper.align");
        ids.extend(store.weights_with_prefix("lower.align"));
        ids
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = self.config.image_size;
        match x.shape() {
            [n, 3, h, w] if *n > 0 && *h == s && *w == s => Ok(()),
            other => Err(Error::shape(format!(
                "AANet expects a non-empty batch [N, 3, {s}, {s}] (image_size {s}), got {other:?}"
            ))),
        }
    }

    /// Stem feature map `[N, stem_channels, S/2, S/2]`.
    pub fn stem(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.stem_conv.forward(s, x)?;
        let h = self.stem_bn.forward(s, h)?;
        Ok(s.graph.relu(h))
    }

    fn local(&self, b: &LocalBranch, s: &mut Session, part: Var, out: &mut AANetOutput) -> Result<(Var, Var)> {
        let x = match &b.align {
            Some(a) => {
                let (y, theta) = a.align(s, part)?;
                out.thetas.push(theta);
                y
            }
            None => part,
        };
        let so = b.stream.forward(s, x)?;
        out.masks.extend(so.mask);
        let logits = b.classifier.forward(s, so.feature)?;
        Ok((so.feature, logits))
    }

    pub fn forward(&self, s: &mut Session, x: &Tensor) -> Result<AANetOutput> {
        self.check_input(x)?;
        let input = s.input(x.clone());
        let stem = self.stem(s, input)?;
        let half = self.config.stem_size() / 2;
        let upper_input = s.graph.narrow_h(stem, 0, half)?;
        let lower_input = s.graph.narrow_h(stem, half, self.config.stem_size() - half)?;
        let g0 = self.global[0].forward(s, stem)?;
        let g1 = self.global[1].forward(s, stem)?;
        let f_g = s.graph.concat(&[g0.feature, g1.feature])?;
        let logits_g = self.global_classifier.forward(s, f_g)?;
        let mut out = AANetOutput {
            f_g,
            f_u: f_g,
            f_l: f_g,
            logits_g,
            logits_u: logits_g,
            logits_l: logits_g,
            stem,
            upper_input,
            lower_input,
            masks: g0.mask.into_iter().chain(g1.mask).collect(),
            thetas: Vec::new(),
        };
        let (f_u, logits_u) = self.local(&self.upper, s, upper_input, &mut out)?;
        let (f_l, logits_l) = self.local(&self.lower, s, lower_input, &mut out)?;
        out.f_u = f_u;
        out.f_l = f_l;
        out.logits_u = logits_u;
        out.logits_l = logits_l;
        Ok(out)
    }

    /// Eval-mode branch features `(f_g, f_u, f_l)`, each `[N, d]`.
    pub fn features(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let mut s = Session::new(store, Mode::Eval);
        let o = self.forward(&mut s, x)?;
        Ok((s.value(o.f_g).clone(), s.value(o.f_u).clone(), s.value(o.f_l).clone()))
    }
}
