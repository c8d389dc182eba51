use serde::{Deserialize, Serialize};

use super::params::{ParamGrads, ParamId, ParamStore};

/// SGD with classical momentum and L2 weight decay.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Vec<f64>>>,
    lr_scale: Vec<f64>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
            lr_scale: Vec::new(),
        }
    }

    /// Multiply the learning rate of `ids` by `scale`.
    pub fn set_lr_scale(&mut self, ids: &[ParamId], scale: f64) {
        for id in ids {
            if self.lr_scale.len() <= id.0 {
                self.lr_scale.resize(id.0 + 1, 1.0);
            }
            self.lr_scale[id.0] = scale;
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) {
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        for (id, g) in &grads.0 {
            let p = store.get_mut(*id).data_mut();
            let v = self.velocity[id.0].get_or_insert_with(|| vec![0.0; p.len()]);
            let lr = lr * self.lr_scale.get(id.0).copied().unwrap_or(1.0);
            for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                let d = gi + self.weight_decay * *pi;
                *vi = self.momentum * *vi + d;
                *pi -= lr * *vi;
            }
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) {
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in &grads.0 {
            let p = store.get_mut(*id).data_mut();
            let (m, v) = self.moments[id.0].get_or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
    }
}

/// Per-epoch learning-rate schedules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// Constant for `constant_epochs`, then linear decay reaching 0 after
    /// `decay_epochs` more.
    LinearDecay {
        base: f64,
        constant_epochs: usize,
        decay_epochs: usize,
    },
    /// `base` for `high_epochs`, then `base * factor` for `low_epochs`.
    StepDrop {
        base: f64,
        high_epochs: usize,
        low_epochs: usize,
        factor: f64,
    },
}

impl LrSchedule {
    pub fn total_epochs(&self) -> usize {
        match *self {
            LrSchedule::LinearDecay {
                constant_epochs,
                decay_epochs,
                ..
            } => constant_epochs + decay_epochs,
            LrSchedule::StepDrop {
                high_epochs,
                low_epochs,
                ..
            } => high_epochs + low_epochs,
        }
    }

    /// Rate used throughout 0-based `epoch`.
    pub fn rate(&self, epoch: usize) -> f64 {
        match *self {
            LrSchedule::LinearDecay {
                base,
                constant_epochs,
                decay_epochs,
            } => {
                if epoch < constant_epochs {
                    base
                } else {
                    let k = (epoch - constant_epochs + 1) as f64;
                    (base * (1.0 - k / (decay_epochs as f64 + 1.0))).max(0.0)
                }
            }
            LrSchedule::StepDrop {
                base,
                high_epochs,
                factor,
                ..
            } => {
                if epoch < high_epochs {
                    base
                } else {
                    base * factor
                }
            }
        }
    }
}
