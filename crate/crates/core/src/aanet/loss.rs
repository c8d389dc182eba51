use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weights of the upper and lower branch losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return Err(Error::validation(format!(
                "loss weights must be finite and non-negative, got ({}, {})",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// `l_g + lambda1 * l_u + lambda2 * l_l`.
pub fn total_loss(l_g: f64, l_u: f64, l_l: f64, w: LossWeights) -> f64 {
    l_g + w.lambda1 * l_u + w.lambda2 * l_l
}

/// Graph form of [`total_loss`].
pub fn total_loss_var(g: &mut Graph, l_g: Var, l_u: Var, l_l: Var, w: LossWeights) -> Result<Var> {
    g.weighted_sum(&[(1.0, l_g), (w.lambda1, l_u), (w.lambda2, l_l)])
}

/// Batch-mean softmax cross-entropy of `logits: [m, n]`.
pub fn ce_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let ce = g.cross_entropy(l, labels)?;
    Ok(g.value(ce).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_hand_values() {
        let t = Tensor::new([1, 2], vec![0.3, 0.3]).unwrap();
        assert!((ce_loss(&t, &[1]).unwrap() - 2f64.ln()).abs() < 1e-12);
        let t = Tensor::new([1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        assert!((ce_loss(&t, &[0]).unwrap() - 0.551445).abs() < 1e-6);
        let t = Tensor::new([1, 2], vec![800.0, 0.0]).unwrap();
        assert_eq!(ce_loss(&t, &[0]).unwrap(), 0.0);
        assert!(ce_loss(&t, &[2]).is_err());
    }

    #[test]
    fn total_loss_cases() {
        let w = |a, b| LossWeights { lambda1: a, lambda2: b };
        assert_eq!(total_loss(0.7, 5.0, 9.0, w(0.0, 0.0)), 0.7);
        assert!((total_loss(0.5, 0.3, 0.2, w(1.0, 1.0)) - 1.0).abs() < 1e-15);
        assert_eq!(total_loss(1.0, 1.0, 5.0, w(2.0, 0.0)), 3.0);
        assert!(w(-1.0, 0.0).validate().is_err());
    }
}
