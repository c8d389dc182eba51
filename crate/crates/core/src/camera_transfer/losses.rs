//! Loss terms of the camera-transfer GAN on probabilities, as plain functions.
//! Training uses the equivalent logit forms in the graph (see `train`).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied to a zero target probability in [`domain_loss`].
pub const DOMAIN_EPS: f64 = 1e-12;

/// `E[log D(x)] + E[log(1 - D(G(x, c)))]` over probability scores.
///
/// Scores must lie strictly inside (0, 1); with `clamp = Some(eps)` they are
/// clamped to `[eps, 1 - eps]` instead of rejected.
pub fn adversarial_loss(d_real: &[f64], d_fake: &[f64], clamp: Option<f64>) -> Result<f64> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::shape("adversarial_loss needs non-empty score batches"));
    }
    let prep = |p: f64| -> Result<f64> {
        match clamp {
            Some(eps) => Ok(p.clamp(eps, 1.0 - eps)),
            None if p > 0.0 && p < 1.0 => Ok(p),
            None => Err(Error::Domain {
                op: "adversarial_loss",
                msg: format!("score {p} outside (0, 1)"),
            }),
        }
    };
    let mut real = 0.0;
    for &p in d_real {
        real += prep(p)?.ln();
    }
    let mut fake = 0.0;
    for &p in d_fake {
        fake += (1.0 - prep(p)?).ln();
    }
    Ok(real / d_real.len() as f64 + fake / d_fake.len() as f64)
}

/// Value of a domain-classification loss and whether the epsilon floor was hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainLoss {
    pub value: f64,
    pub floored: bool,
}

/// `-log D_dom(target | x)` for one probability vector.
pub fn domain_loss(d_dom: &[f64], target: usize) -> Result<DomainLoss> {
    if target >= d_dom.len() {
        return Err(Error::validation(format!(
            "target camera {target} outside {} domains",
            d_dom.len()
        )));
    }
    let sum: f64 = d_dom.iter().sum();
    if d_dom.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-5 {
        return Err(Error::Domain {
            op: "domain_loss",
            msg: format!("not a probability vector (sum {sum})"),
        });
    }
    let p = d_dom[target];
    let floored = p < DOMAIN_EPS;
    if floored {
        log::warn!("domain_loss: target probability {p:e} floored to {DOMAIN_EPS:e}");
    }
    Ok(DomainLoss {
        value: -p.max(DOMAIN_EPS).ln(),
        floored,
    })
}

/// Mean [`domain_loss`] over the rows of `probs: [B, N]`.
pub fn domain_loss_batch(probs: &Tensor, targets: &[usize]) -> Result<DomainLoss> {
    let (b, n) = probs.dims2()?;
    if targets.len() != b || b == 0 {
        return Err(Error::shape(format!("{} targets for {b} rows", targets.len())));
    }
    let mut acc = 0.0;
    let mut floored = false;
    for (row, &t) in probs.data().chunks(n).zip(targets) {
        let d = domain_loss(row, t)?;
        acc += d.value;
        floored |= d.floored;
    }
    Ok(DomainLoss {
        value: acc / b as f64,
        floored,
    })
}

/// Per-element mean `|x - x_cycled|`.
pub fn reconstruction_loss(x: &Tensor, x_cycled: &Tensor) -> Result<f64> {
    if x.shape() != x_cycled.shape() {
        return Err(Error::shape(format!(
            "reconstruction_loss: {:?} vs {:?}",
            x.shape(),
            x_cycled.shape()
        )));
    }
    let n = x.numel().max(1) as f64;
    Ok(x.data().iter().zip(x_cycled.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adversarial_hand_values() {
        let v = adversarial_loss(&[0.5], &[0.5], None).unwrap();
        assert!((v + 1.386294).abs() < 1e-6);
        assert_eq!(adversarial_loss(&[0.5, 0.5], &[0.5, 0.5], None).unwrap(), v);
        let near = adversarial_loss(&[1.0 - 1e-9], &[1e-9], None).unwrap();
        assert!(near < 0.0 && near > -1e-8);
    }

    #[test]
    fn adversarial_rejects_or_clamps_out_of_range() {
        assert!(matches!(adversarial_loss(&[1.0], &[0.5], None), Err(Error::Domain { .. })));
        assert!(adversarial_loss(&[1.0], &[0.0], Some(1e-7)).unwrap().is_finite());
    }

    #[test]
    fn domain_hand_values() {
        assert_eq!(domain_loss(&[0.0, 1.0], 1).unwrap().value, 0.0);
        assert!((domain_loss(&[0.25; 4], 2).unwrap().value - 1.386294).abs() < 1e-6);
        assert!((domain_loss(&[0.9, 0.1], 1).unwrap().value - std::f64::consts::LN_10).abs() < 1e-12);
        let f = domain_loss(&[1.0, 0.0], 1).unwrap();
        assert!(f.floored);
        assert!((f.value - 27.631021).abs() < 1e-6);
        assert!(domain_loss(&[0.5, 0.6], 0).is_err());
        assert!(domain_loss(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn reconstruction_cases() {
        let x = Tensor::zeros([1, 3, 2, 2]);
        let y = Tensor::full([1, 3, 2, 2], 0.5);
        assert_eq!(reconstruction_loss(&x, &x).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&x, &y).unwrap(), 0.5);
        assert_eq!(reconstruction_loss(&y, &x).unwrap(), 0.5);
        assert!(reconstruction_loss(&x, &Tensor::zeros([1, 3, 2, 3])).is_err());
    }
}
