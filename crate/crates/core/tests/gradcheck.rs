mod common;

use common::{aanet_gradcheck, gan_gradcheck, rel_err, rng, FD_STEP, GRAD_RTOL};
use xcam_core::autograd::{Graph, Var};
use xcam_core::error::Result;
use xcam_core::tensor::Tensor;

/// Finite-difference check of `sum(r * op(inputs))` for a fixed random `r`.
fn check_op(inputs: Vec<Tensor>, op: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
    let eval = |ins: &[Tensor]| -> (Graph, Vec<Var>, Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let y = op(&mut g, &vars).unwrap();
        let shape = g.shape(y).to_vec();
        let r = g.constant(Tensor::uniform(shape, -1.0, 1.0, &mut rng(7)));
        let p = g.mul(y, r).unwrap();
        let loss = g.sum(p);
        (g, vars, loss)
    };
    let (g, vars, loss) = eval(&inputs);
    let grads = g.backward(loss).unwrap();
    let mut ins = inputs.clone();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape().to_vec()));
        for i in 0..ins[k].numel() {
            let orig = ins[k].data()[i];
            ins[k].data_mut()[i] = orig + FD_STEP;
            let (g1, _, l1) = eval(&ins);
            ins[k].data_mut()[i] = orig - FD_STEP;
            let (g2, _, l2) = eval(&ins);
            ins[k].data_mut()[i] = orig;
            let num = (g1.value(l1).item() - g2.value(l2).item()) / (2.0 * FD_STEP);
            let e = rel_err(analytic.data()[i], num);
            assert!(e <= GRAD_RTOL, "input {k}[{i}]: analytic {} numeric {num} (rel {e:e})", analytic.data()[i]);
        }
    }
}

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, &mut rng(seed))
}

#[test]
fn conv2d_with_stride_and_padding() {
    check_op(vec![randn(&[2, 2, 5, 5], 1), randn(&[3, 2, 3, 3], 2), randn(&[3], 3)], |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), 2, 1)
    });
}

#[test]
fn linear_and_softmax() {
    check_op(vec![randn(&[3, 4], 4), randn(&[5, 4], 5), randn(&[5], 6)], |g, v| {
        let y = g.linear(v[0], v[1], Some(v[2]))?;
        g.softmax(y)
    });
}

#[test]
fn batch_norm_training_statistics() {
    check_op(vec![randn(&[4, 3, 2, 2], 7), randn(&[3], 8), randn(&[3], 9)], |g, v| {
        Ok(g.batch_norm(v[0], v[1], v[2], None, 1e-5)?.0)
    });
}

#[test]
fn smooth_pointwise_ops() {
    check_op(vec![randn(&[2, 6], 10), randn(&[2, 6], 11)], |g, v| {
        let a = g.sigmoid(v[0]);
        let b = g.log_sigmoid(v[1]);
        let c = g.mul(a, b)?;
        let d = g.sub(c, v[0])?;
        let e = g.scale(d, 0.7);
        g.add(e, v[1])
    });
}

#[test]
fn piecewise_linear_ops_away_from_kinks() {
    // values bounded away from zero so no kink lies within one FD step
    let x = randn(&[3, 5], 12).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    check_op(vec![x], |g, v| {
        let a = g.relu(v[0]);
        let b = g.leaky_relu(v[0], 0.2);
        let c = g.abs(v[0]);
        g.weighted_sum(&[(1.0, a), (2.0, b), (0.5, c)])
    });
}

#[test]
fn pooling_layout_and_upsampling() {
    check_op(vec![randn(&[2, 3, 4, 4], 13), randn(&[2, 6], 14)], |g, v| {
        let top = g.narrow_h(v[0], 0, 2)?;
        let bottom = g.narrow_h(v[0], 2, 2)?;
        let joined = g.concat(&[bottom, top])?;
        let up = g.upsample2x(joined)?;
        let scaled = g.channel_scale(up, v[1])?;
        let pooled = g.global_avg_pool(scaled)?;
        g.reshape(pooled, &[12])
    });
}

#[test]
fn cross_entropy_and_means() {
    check_op(vec![randn(&[4, 3], 15)], |g, v| {
        let ce = g.cross_entropy(v[0], &[0, 2, 1, 2])?;
        let m = g.mean(v[0]);
        g.add(ce, m)
    });
}

#[test]
fn affine_grid_and_bilinear_sampling() {
    // theta kept off integer-pixel sampling positions
    let theta = Tensor::new([2, 6], vec![0.9, 0.13, 0.071, -0.11, 1.07, 0.033, 1.1, -0.05, -0.043, 0.02, 0.85, 0.061]).unwrap();
    check_op(vec![randn(&[2, 2, 4, 5], 16), theta], |g, v| {
        let grid = g.affine_grid(v[1], 3, 4)?;
        g.grid_sample(v[0], grid)
    });
}

#[test]
fn mini_gan_generator_total() {
    let r = gan_gradcheck(11, true);
    assert!(r.checked >= 200);
    assert!(r.passed(), "{r:?}");
}

#[test]
fn mini_gan_discriminator_total() {
    let r = gan_gradcheck(12, false);
    assert!(r.checked >= 200);
    assert!(r.passed(), "{r:?}");
}

#[test]
fn mini_aanet_total() {
    let r = aanet_gradcheck(13);
    assert!(r.checked >= 200);
    assert!(r.passed(), "{r:?}");
}
