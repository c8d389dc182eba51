//! Channel attention: `M = softmax(conv1x1(GAP(f)))`, then `f * M` per channel.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{ParamKind, ParamStore, Session};
use crate::nn::Linear;
use crate::tensor::Tensor;

/// The 1x1 convolution on a pooled `1x1xC` map is a `C -> C` linear map.
#[derive(Clone, Debug)]
pub struct AttentionModule {
    pub conv: Linear,
    pub channels: usize,
}

impl AttentionModule {
    /// Identity-initialized, so a fresh module yields `softmax(GAP(f))`.
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let mut eye = vec![0.0; channels * channels];
        for c in 0..channels {
            eye[c * channels + c] = 1.0;
        }
        let weight = store.add(
            format!("{name}.weight"),
            ParamKind::Weight,
            Tensor::new([channels, channels], eye).expect("square"),
        );
        let bias = Some(store.add(format!("{name}.bias"), ParamKind::Weight, Tensor::zeros([channels])));
        AttentionModule {
            conv: Linear { weight, bias },
            channels,
        }
    }

    /// Mask `[N, C]`; each row is a probability vector over channels.
    pub fn mask(&self, s: &mut Session, f_r: Var) -> Result<Var> {
        let c = s.graph.shape(f_r).get(1).copied().unwrap_or(0);
        if c != self.channels {
            return Err(Error::shape(format!(
                "attention module built for {} channels, got {c}",
                self.channels
            )));
        }
        let pooled = s.graph.global_avg_pool(f_r)?;
        let logits = self.conv.forward(s, pooled)?;
        s.graph.softmax(logits)
    }

    /// `(mask, f_r * mask)`.
    pub fn forward(&self, s: &mut Session, f_r: Var) -> Result<(Var, Var)> {
        let m = self.mask(s, f_r)?;
        let out = apply_attention(&mut s.graph, f_r, m)?;
        Ok((m, out))
    }
}

/// Scale channel `k` of `f_a: [N, C, H, W]` by `m[n, k]`.
pub fn apply_attention(g: &mut Graph, f_a: Var, m: Var) -> Result<Var> {
    let fs = g.shape(f_a).to_vec();
    let ms = g.shape(m).to_vec();
    if fs.len() != 4 || ms.len() != 2 || ms[1] != fs[1] || ms[0] != fs[0] {
        return Err(Error::shape(format!(
            "attention mask {ms:?} does not match feature map {fs:?}"
        )));
    }
    g.channel_scale(f_a, m)
}

/// Stand-alone mask for a single `[C, H, W]` map given the 1x1 conv weights.
pub fn attention_mask(f_r: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Vec<f64>> {
    let s = f_r.shape();
    if s.len() != 3 || s[0] == 0 {
        return Err(Error::shape(format!("attention_mask expects [C, H, W], got {s:?}")));
    }
    let c = s[0];
    if weight.shape() != [c, c] || bias.shape() != [c] {
        return Err(Error::shape(format!(
            "attention conv must be [{c}, {c}] + [{c}], got {:?} + {:?}",
            weight.shape(),
            bias.shape()
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(f_r.clone().reshape([1, c, s[1], s[2]])?);
    let w = g.constant(weight.clone());
    let b = g.constant(bias.clone());
    let p = g.global_avg_pool(x)?;
    let l = g.linear(p, w, Some(b))?;
    let m = g.softmax(l)?;
    Ok(g.value(m).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye(c: usize) -> Tensor {
        let mut d = vec![0.0; c * c];
        for i in 0..c {
            d[i * c + i] = 1.0;
        }
        Tensor::new([c, c], d).unwrap()
    }

    #[test]
    fn constant_map_gives_uniform_mask() {
        let m = attention_mask(&Tensor::full([5, 3, 3], 0.7), &eye(5), &Tensor::zeros([5])).unwrap();
        for v in m {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_softmax() {
        // zero weights: logits are the bias
        let b = Tensor::new([2], vec![0.0, 3f64.ln()]).unwrap();
        let m = attention_mask(&Tensor::full([2, 2, 2], 1.0), &Tensor::zeros([2, 2]), &b).unwrap();
        assert!((m[0] - 0.25).abs() < 1e-15 && (m[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn apply_rejects_wrong_length() {
        let mut g = Graph::new();
        let f = g.constant(Tensor::zeros([1, 3, 2, 2]));
        let m = g.constant(Tensor::zeros([1, 2]));
        assert!(apply_attention(&mut g, f, m).is_err());
    }
}
