//! Spatial transformer alignment: localization net -> affine grid -> bilinear sampler.

use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Linear, ParamStore, Session};

pub const IDENTITY_THETA: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// `|det|` below this is reported as a degenerate transform.
const DEGENERATE_DET: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct AlignmentModule {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    /// Zero weights, identity bias: the module starts as a no-op.
    pub regressor: Linear,
    /// Output spatial size; `None` keeps the input size.
    pub out_size: Option<(usize, usize)>,
}

impl AlignmentModule {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, channels: usize, hidden: usize, rng: &mut R) -> Self {
        AlignmentModule {
            conv1: Conv2d::same(store, &format!("{name}.loc1"), channels, hidden, 3, 1, rng),
            conv2: Conv2d::same(store, &format!("{name}.loc2"), hidden, hidden, 3, 2, rng),
            regressor: Linear::constant(store, &format!("{name}.theta"), hidden, &IDENTITY_THETA),
            out_size: None,
        }
    }

    /// Affine parameters `[N, 6]` (row-major `[a b tx; c d ty]`).
    pub fn theta(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.conv1.forward(s, x)?;
        let h = s.graph.relu(h);
        let h = self.conv2.forward(s, h)?;
        let h = s.graph.relu(h);
        let p = s.graph.global_avg_pool(h)?;
        self.regressor.forward(s, p)
    }

    /// Resample `x` under the predicted transform; returns `(aligned, theta)`.
    pub fn align(&self, s: &mut Session, x: Var) -> Result<(Var, Var)> {
        let shape = s.graph.shape(x).to_vec();
        if shape.len() != 4 || shape[2] < 2 || shape[3] < 2 {
            return Err(Error::shape(format!("align needs an NCHW map with H, W >= 2, got {shape:?}")));
        }
        let theta = self.theta(s, x)?;
        warn_if_degenerate(s.graph.value(theta).data());
        let (oh, ow) = self.out_size.unwrap_or((shape[2], shape[3]));
        let grid = s.graph.affine_grid(theta, oh, ow)?;
        Ok((s.graph.grid_sample(x, grid)?, theta))
    }
}

fn warn_if_degenerate(theta: &[f64]) {
    for (i, t) in theta.chunks_exact(6).enumerate() {
        let det = t[0] * t[4] - t[1] * t[3];
        if det.abs() < DEGENERATE_DET {
            log::warn!("alignment: near-singular affine transform for sample {i} (det {det:.3e})");
        }
    }
}
