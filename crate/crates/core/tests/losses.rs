mod common;

use common::{mini_gan, rng};
use proptest::prelude::*;
use rand::Rng;
use xcam_core::aanet::{ce_loss, total_loss, LossWeights};
use xcam_core::camera_transfer::{adversarial_loss, domain_loss, domain_loss_batch, reconstruction_loss, transfer_losses};
use xcam_core::tensor::Tensor;

const LN4: f64 = 1.386_294_361_119_890_6;

#[test]
fn adversarial_at_chance() {
    let v = adversarial_loss(&[0.5], &[0.5], None).unwrap();
    assert!((v - (-1.386294)).abs() <= 1e-6);
    assert!((v + LN4).abs() <= 1e-15);
}

#[test]
fn domain_loss_uniform_over_four() {
    let d = domain_loss(&[0.25; 4], 2).unwrap();
    assert!((d.value - 1.386294).abs() <= 1e-6);
    assert!(!d.floored);
    assert!(domain_loss(&[0.25; 4], 4).is_err());
    assert!(domain_loss(&[0.5, 0.6], 0).is_err());
}

#[test]
fn zero_probability_is_floored_not_infinite() {
    let d = domain_loss(&[1.0, 0.0], 1).unwrap();
    assert!(d.floored && d.value.is_finite());
}

#[test]
fn reconstruction_of_itself_is_exactly_zero() {
    let x = Tensor::randn([2, 3, 5, 5], 1.0, &mut rng(1));
    assert_eq!(reconstruction_loss(&x, &x).unwrap(), 0.0);
}

#[test]
fn cross_entropy_with_equal_logits_is_ln_n() {
    for n in [2usize, 3, 7, 50, 576] {
        let logits = Tensor::full([3, n], 0.37);
        let v = ce_loss(&logits, &[0, n / 2, n - 1]).unwrap();
        assert!((v - (n as f64).ln()).abs() <= 1e-12, "n = {n}");
    }
}

#[test]
fn total_loss_is_linear_in_each_term() {
    let mut r = rng(2);
    for _ in 0..100 {
        let w = LossWeights {
            lambda1: r.random_range(0.0..3.0),
            lambda2: r.random_range(0.0..3.0),
        };
        let (g, u, l) = (r.random_range(0.0..10.0), r.random_range(0.0..10.0), r.random_range(0.0..10.0));
        let k: f64 = r.random_range(0.1..4.0);
        let t = total_loss(g, u, l, w);
        assert!((t - (g + w.lambda1 * u + w.lambda2 * l)).abs() <= 1e-12);
        assert!((total_loss(k * g, k * u, k * l, w) - k * t).abs() <= 1e-12 * k.max(1.0) * t.max(1.0));
        let (g2, u2, l2) = (r.random_range(0.0..10.0), r.random_range(0.0..10.0), r.random_range(0.0..10.0));
        let sum = total_loss(g + g2, u + u2, l + l2, w);
        assert!((sum - t - total_loss(g2, u2, l2, w)).abs() <= 1e-12);
    }
}

/// The in-graph logit forms agree with the probability forms evaluated on
/// the model's own outputs.
#[test]
fn graph_losses_match_probability_forms() {
    let (model, x, src, tgt) = mini_gan(3);
    let rep = transfer_losses(&model, &x, &src, &tgt).unwrap();
    let fake = model.translate(&x, &tgt).unwrap();
    let adv = adversarial_loss(&model.source_probs(&x).unwrap(), &model.source_probs(&fake).unwrap(), None).unwrap();
    assert!((rep.l_adv - adv).abs() <= 1e-9, "{} vs {adv}", rep.l_adv);
    let dom_real = domain_loss_batch(&model.domain_probs(&x).unwrap(), &src).unwrap().value;
    assert!((rep.l_dom_real - dom_real).abs() <= 1e-9);
    let dom_fake = domain_loss_batch(&model.domain_probs(&fake).unwrap(), &tgt).unwrap().value;
    assert!((rep.l_dom_fake - dom_fake).abs() <= 1e-9);
    let cycled = model.translate(&fake, &src).unwrap();
    assert!((rep.l_rec - reconstruction_loss(&x, &cycled).unwrap()).abs() <= 1e-12);
    assert!((rep.total_g - rep.expected_total_g()).abs() <= 1e-12);
    assert!((rep.total_d - rep.expected_total_d()).abs() <= 1e-12);
}

proptest! {
    #[test]
    fn reconstruction_is_symmetric_and_nonnegative(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = Tensor::randn([1, 3, 4, 4], 1.0, &mut r);
        let b = Tensor::randn([1, 3, 4, 4], 1.0, &mut r);
        let ab = reconstruction_loss(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, reconstruction_loss(&b, &a).unwrap());
    }

    #[test]
    fn adversarial_is_nonpositive(real in prop::collection::vec(0.001f64..0.999, 1..10), fake in prop::collection::vec(0.001f64..0.999, 1..10)) {
        prop_assert!(adversarial_loss(&real, &fake, None).unwrap() <= 0.0);
    }

    #[test]
    fn domain_loss_falls_as_target_probability_rises(p in 0.01f64..0.98, dp in 0.001f64..0.01) {
        let lo = domain_loss(&[p, 1.0 - p], 0).unwrap().value;
        let hi = domain_loss(&[p + dp, 1.0 - p - dp], 0).unwrap().value;
        prop_assert!(hi < lo);
    }
}
