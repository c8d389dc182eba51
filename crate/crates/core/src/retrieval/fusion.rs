use crate::error::{Error, Result};

/// `[alpha * f_g, (1 - alpha) * f_u, (1 - alpha) * f_l]`, global part first.
pub fn fuse(f_g: &[f64], f_u: &[f64], f_l: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if f_u.len() != f_g.len() || f_l.len() != f_g.len() {
        return Err(Error::shape(format!(
            "branch features differ in length: {}, {}, {}",
            f_g.len(),
            f_u.len(),
            f_l.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::validation(format!("alpha {alpha} outside [0, 1]")));
    }
    let beta = 1.0 - alpha;
    let mut out = Vec::with_capacity(3 * f_g.len());
    out.extend(f_g.iter().map(|v| v * alpha));
    out.extend(f_u.iter().map(|v| v * beta));
    out.extend(f_l.iter().map(|v| v * beta));
    Ok(out)
}

/// Scale to unit Euclidean norm; the zero vector is returned unchanged.
pub fn l2_normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
