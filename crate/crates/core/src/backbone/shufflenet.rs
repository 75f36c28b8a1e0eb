//! ShuffleNet v1: pointwise group convolutions with channel shuffle and
//! depthwise 3×3 bottlenecks.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::blocks::{boxed, ConvBnAct, Dense, GlobalPool, MaxPool};
use crate::error::Result;
use crate::nn::layers::{avg_pool2d, channel_shuffle, Activation, BatchNorm2d, Conv2d, ConvSpec};
use crate::nn::{Act, Ctx, Layer, NetBuilder, Scope};

const BN_EPS: f64 = 1e-5;

/// Width and grouping. The default reproduces the 1.4M-parameter reference
/// network whose final stage yields 544 maps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShuffleNetConfig {
    pub groups: usize,
    pub stem_channels: usize,
    pub stage_channels: [usize; 3],
    pub stage_repeats: [usize; 3],
}

impl Default for ShuffleNetConfig {
    fn default() -> Self {
        Self {
            groups: 1,
            stem_channels: 24,
            stage_channels: [136, 272, 544],
            stage_repeats: [4, 8, 4],
        }
    }
}

impl ShuffleNetConfig {
    pub fn out_channels(&self) -> usize {
        self.stage_channels[2]
    }

    pub fn anchor(&self) -> String {
        format!("stage4/unit{}/add", self.stage_repeats[2])
    }
}

#[derive(Debug)]
struct Unit {
    gconv1: Conv2d,
    bn1: BatchNorm2d,
    dwconv: Conv2d,
    bn2: BatchNorm2d,
    gconv2: Conv2d,
    bn3: BatchNorm2d,
    shuffle_groups: usize,
    downsample: bool,
}

impl Unit {
    fn new(s: &Scope, c_in: usize, c_out: usize, groups: usize, first_grouped: bool, downsample: bool) -> Result<Self> {
        let mid = c_out / 4;
        let branch_out = if downsample { c_out - c_in } else { c_out };
        let g1 = if first_grouped { groups } else { 1 };
        Ok(Self {
            gconv1: Conv2d::new(&s.pp("gconv1"), ConvSpec::new(c_in, mid, 1).groups(g1))?,
            bn1: BatchNorm2d::new(&s.pp("bn1"), mid, BN_EPS)?,
            dwconv: Conv2d::new(
                &s.pp("dwconv"),
                ConvSpec::new(mid, mid, 3).stride(if downsample { 2 } else { 1 }).same().groups(mid),
            )?,
            bn2: BatchNorm2d::new(&s.pp("bn2"), mid, BN_EPS)?,
            gconv2: Conv2d::new(&s.pp("gconv2"), ConvSpec::new(mid, branch_out, 1).groups(groups))?,
            bn3: BatchNorm2d::new(&s.pp("bn3"), branch_out, BN_EPS)?,
            shuffle_groups: g1,
            downsample,
        })
    }
}

impl Layer for Unit {
    /// Residual sum (stride 1) or pooled-shortcut concat (stride 2), before
    /// the unit's closing ReLU.
    fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let h = self.bn1.forward(&self.gconv1.forward(x)?, ctx)?.relu()?;
        let h = channel_shuffle(&h, self.shuffle_groups)?;
        let h = self.bn2.forward(&self.dwconv.forward(&h)?, ctx)?;
        let h = self.bn3.forward(&self.gconv2.forward(&h)?, ctx)?;
        if self.downsample {
            Ok(Tensor::cat(&[avg_pool2d(x, 3, 2, 1)?, h], 1)?)
        } else {
            Ok((x + h)?)
        }
    }
}

pub(crate) fn build(b: &mut NetBuilder, root: &Scope, cfg: &ShuffleNetConfig, num_classes: usize) -> Result<()> {
    let stem = cfg.stem_channels;
    b.push("conv1", || {
        boxed(ConvBnAct::new(
            &root.pp("conv1"),
            ConvSpec::new(3, stem, 3).stride(2).same(),
            Some(Activation::Relu),
            BN_EPS,
        )?)
    })?;
    b.push("maxpool", || {
        boxed(MaxPool {
            kernel: 3,
            stride: 2,
            padding: 1,
            ceil: false,
        })
    })?;
    let mut c_in = stem;
    for (si, (&c_out, &reps)) in cfg.stage_channels.iter().zip(cfg.stage_repeats.iter()).enumerate() {
        let stage = si + 2;
        for u in 0..reps {
            let downsample = u == 0;
            let first_grouped = !(si == 0 && u == 0);
            let s = root.pp(format!("stage{stage}")).pp(u);
            let tag = if downsample { "concat" } else { "add" };
            let unit_in = c_in;
            b.push(format!("stage{stage}/unit{}/{tag}", u + 1), || {
                boxed(Unit::new(&s, unit_in, c_out, cfg.groups, first_grouped, downsample)?)
            })?;
            b.push(format!("stage{stage}/unit{}/relu", u + 1), || boxed(Act(Activation::Relu)))?;
            c_in = c_out;
        }
    }
    b.push("pool", || boxed(GlobalPool))?;
    b.push("classifier", || boxed(Dense(crate::nn::layers::Linear::new(&root.pp("classifier"), c_in, num_classes)?)))?;
    Ok(())
}
