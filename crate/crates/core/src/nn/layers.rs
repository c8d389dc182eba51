use rand::Rng;

use super::params::{Mode, ParamId, ParamKind, ParamStore, Session};
use crate::autograd::Var;
use crate::error::Result;
use crate::tensor::Tensor;

/// He-normal standard deviation for a layer with the given fan-in.
fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in.max(1) as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let std = he_std(cin * kernel * kernel);
        let weight = store.add(
            format!("{name}.weight"),
            ParamKind::Weight,
            Tensor::randn([cout, cin, kernel, kernel], std, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), ParamKind::Weight, Tensor::zeros([cout])));
        Conv2d {
            weight,
            bias,
            stride,
            pad,
        }
    }

    /// `same`-padded odd kernel at stride 1 or 2.
    pub fn same<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        Self::new(store, name, cin, cout, kernel, stride, kernel / 2, true, rng)
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        s.graph.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fin: usize, fout: usize, rng: &mut R) -> Self {
        Self::with_std(store, name, fin, fout, he_std(fin), rng)
    }

    pub fn with_std<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fin: usize,
        fout: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            ParamKind::Weight,
            Tensor::randn([fout, fin], std, rng),
        );
        let bias = Some(store.add(format!("{name}.bias"), ParamKind::Weight, Tensor::zeros([fout])));
        Linear { weight, bias }
    }

    /// Zero weights and a fixed bias, e.g. an affine regressor starting at identity.
    pub fn constant(store: &mut ParamStore, name: &str, fin: usize, bias: &[f64]) -> Self {
        let fout = bias.len();
        let weight = store.add(format!("{name}.weight"), ParamKind::Weight, Tensor::zeros([fout, fin]));
        let bias = Some(store.add(
            format!("{name}.bias"),
            ParamKind::Weight,
            Tensor::new([fout], bias.to_vec()).expect("bias length matches"),
        ));
        Linear { weight, bias }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = self.bias.map(|b| s.param(b));
        s.graph.linear(x, w, b)
    }
}

/// Batch normalization over axis 1 for NCHW maps or `[N, C]` features.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), ParamKind::Weight, Tensor::full([channels], 1.0)),
            beta: store.add(format!("{name}.beta"), ParamKind::Weight, Tensor::zeros([channels])),
            running_mean: store.add(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros([channels])),
            running_var: store.add(format!("{name}.running_var"), ParamKind::Buffer, Tensor::full([channels], 1.0)),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        match s.mode() {
            Mode::Train => {
                let (y, stats) = s.graph.batch_norm(x, gamma, beta, None, self.eps)?;
                if let Some(stats) = stats {
                    s.record_stats(self.running_mean, self.running_var, stats);
                }
                Ok(y)
            }
            Mode::Eval => {
                let m = s.store().get(self.running_mean).data().to_vec();
                let v = s.store().get(self.running_var).data().to_vec();
                let (y, _) = s.graph.batch_norm(x, gamma, beta, Some((&m, &v)), self.eps)?;
                Ok(y)
            }
        }
    }
}
