//! Residual stages used by every AANet branch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::Result;
use crate::nn::{BatchNorm, Conv2d, ParamStore, Session};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Two 3x3 convolutions.
    Basic,
    /// 1x1 reduce, 3x3, 1x1 expand (4x reduction).
    Bottleneck,
}

#[derive(Clone, Debug)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        ConvBn {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, k, stride, k / 2, false, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout),
        }
    }

    fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let y = self.conv.forward(s, x)?;
        self.bn.forward(s, y)
    }
}

#[derive(Clone, Debug)]
pub struct ResidualBlock {
    body: Vec<ConvBn>,
    shortcut: Option<ConvBn>,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        kind: BlockKind,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let body = match kind {
            BlockKind::Basic => vec![
                ConvBn::new(store, &format!("{name}.a"), cin, cout, 3, stride, rng),
                ConvBn::new(store, &format!("{name}.b"), cout, cout, 3, 1, rng),
            ],
            BlockKind::Bottleneck => {
                let mid = (cout / 4).max(1);
                vec![
                    ConvBn::new(store, &format!("{name}.a"), cin, mid, 1, 1, rng),
                    ConvBn::new(store, &format!("{name}.b"), mid, mid, 3, stride, rng),
                    ConvBn::new(store, &format!("{name}.c"), mid, cout, 1, 1, rng),
                ]
            }
        };
        let shortcut =
            (stride != 1 || cin != cout).then(|| ConvBn::new(store, &format!("{name}.proj"), cin, cout, 1, stride, rng));
        ResidualBlock { body, shortcut }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.body.len() - 1;
        for (i, layer) in self.body.iter().enumerate() {
            h = layer.forward(s, h)?;
            if i != last {
                h = s.graph.relu(h);
            }
        }
        let skip = match &self.shortcut {
            Some(p) => p.forward(s, x)?,
            None => x,
        };
        let y = s.graph.add(h, skip)?;
        Ok(s.graph.relu(y))
    }
}

/// Stages of residual blocks; the first block of each stage applies its stride.
#[derive(Clone, Debug)]
pub struct Backbone {
    blocks: Vec<ResidualBlock>,
    pub out_channels: usize,
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        kind: BlockKind,
        cin: usize,
        stages: &[(usize, usize)],
        blocks_per_stage: usize,
        rng: &mut R,
    ) -> Self {
        let mut blocks = Vec::new();
        let mut c = cin;
        for (si, &(cout, stride)) in stages.iter().enumerate() {
            for bi in 0..blocks_per_stage.max(1) {
                let st = if bi == 0 { stride } else { 1 };
                blocks.push(ResidualBlock::new(store, &format!("{name}.s{si}b{bi}"), kind, c, cout, st, rng));
                c = cout;
            }
        }
        Backbone { blocks, out_channels: c }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        self.blocks.iter().try_fold(x, |h, b| b.forward(s, h))
    }
}
