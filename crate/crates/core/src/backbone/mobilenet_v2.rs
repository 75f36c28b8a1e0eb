//! MobileNet-v2 (width 1.0), torchvision parameter layout.

use candle_core::Tensor;

use super::blocks::{boxed, BnOnly, ConvBnAct, ConvOnly, Dense, DropoutLayer, GlobalPool};
use crate::error::Result;
use crate::nn::layers::{Activation, BatchNorm2d, Conv2d, ConvSpec, Dropout, Linear};
use crate::nn::{Act, Ctx, Layer, NetBuilder, Scope};

const BN_EPS: f64 = 1e-5;
pub(crate) const ANCHOR: &str = "head/relu6";

/// (expansion t, output channels c, repeats n, first stride s)
const SETTINGS: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

#[derive(Debug)]
struct InvertedResidual {
    expand: Option<ConvBnAct>,
    depthwise: ConvBnAct,
    project: Conv2d,
    bn: BatchNorm2d,
    residual: bool,
}

impl InvertedResidual {
    fn new(s: &Scope, c_in: usize, c_out: usize, stride: usize, t: usize) -> Result<Self> {
        let hidden = c_in * t;
        let conv = s.pp("conv");
        let mut idx = 0;
        let expand = if t != 1 {
            idx += 1;
            Some(ConvBnAct::new(&conv.pp(0), ConvSpec::new(c_in, hidden, 1), Some(Activation::Relu6), BN_EPS)?)
        } else {
            None
        };
        let depthwise = ConvBnAct::new(
            &conv.pp(idx),
            ConvSpec::new(hidden, hidden, 3).stride(stride).same().groups(hidden),
            Some(Activation::Relu6),
            BN_EPS,
        )?;
        let project = Conv2d::new(&conv.pp(idx + 1), ConvSpec::new(hidden, c_out, 1))?;
        let bn = BatchNorm2d::new(&conv.pp(idx + 2), c_out, BN_EPS)?;
        Ok(Self {
            expand,
            depthwise,
            project,
            bn,
            residual: stride == 1 && c_in == c_out,
        })
    }
}

impl Layer for InvertedResidual {
    fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let mut h = match &self.expand {
            Some(e) => e.forward(x, ctx)?,
            None => x.clone(),
        };
        h = self.depthwise.forward(&h, ctx)?;
        h = self.bn.forward(&self.project.forward(&h)?, ctx)?;
        if self.residual {
            Ok((x + h)?)
        } else {
            Ok(h)
        }
    }
}

pub(crate) fn build(b: &mut NetBuilder, root: &Scope, num_classes: usize) -> Result<()> {
    let f = root.pp("features");
    b.push("stem", || {
        boxed(ConvBnAct::new(&f.pp(0), ConvSpec::new(3, 32, 3).stride(2).same(), Some(Activation::Relu6), BN_EPS)?)
    })?;
    let mut c_in = 32;
    let mut idx = 1;
    for (t, c, n, s) in SETTINGS {
        for i in 0..n {
            let stride = if i == 0 { s } else { 1 };
            let scope = f.pp(idx);
            let cin = c_in;
            b.push(format!("block{idx}"), || boxed(InvertedResidual::new(&scope, cin, c, stride, t)?))?;
            c_in = c;
            idx += 1;
        }
    }
    let head = f.pp(idx);
    b.push("head/conv", || boxed(ConvOnly(Conv2d::new(&head.pp(0), ConvSpec::new(c_in, 1280, 1))?)))?;
    b.push("head/bn", || boxed(BnOnly(BatchNorm2d::new(&head.pp(1), 1280, BN_EPS)?)))?;
    b.push(ANCHOR, || boxed(Act(Activation::Relu6)))?;
    b.push("pool", || boxed(GlobalPool))?;
    b.push("dropout", || boxed(DropoutLayer(Dropout::new(0.2, 20))))?;
    b.push("classifier", || boxed(Dense(Linear::new(&root.pp("classifier").pp(1), 1280, num_classes)?)))?;
    Ok(())
}
