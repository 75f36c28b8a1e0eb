//! SqueezeNet 1.1. Parameter names follow the torchvision layout so
//! converted torchvision weights load directly.

use candle_core::Tensor;

use super::blocks::{boxed, ConvBnAct, ConvOnly, DropoutLayer, GlobalPool, MaxPool};
use crate::error::Result;
use crate::nn::layers::{Activation, Conv2d, ConvSpec, Dropout};
use crate::nn::{Act, Ctx, Layer, NetBuilder, Scope};

pub(crate) const ANCHOR: &str = "fire9/concat";

/// Squeeze 1×1, then parallel 1×1 and 3×3 expands concatenated on depth.
#[derive(Debug)]
struct Fire {
    squeeze: Conv2d,
    expand1x1: Conv2d,
    expand3x3: Conv2d,
}

impl Fire {
    fn new(s: &Scope, c_in: usize, squeeze: usize, expand: usize) -> Result<Self> {
        Ok(Self {
            squeeze: Conv2d::new(&s.pp("squeeze"), ConvSpec::new(c_in, squeeze, 1).bias(true))?,
            expand1x1: Conv2d::new(&s.pp("expand1x1"), ConvSpec::new(squeeze, expand, 1).bias(true))?,
            expand3x3: Conv2d::new(&s.pp("expand3x3"), ConvSpec::new(squeeze, expand, 3).same().bias(true))?,
        })
    }
}

impl Layer for Fire {
    fn forward(&self, x: &Tensor, _ctx: &Ctx) -> Result<Tensor> {
        let s = self.squeeze.forward(x)?.relu()?;
        let a = self.expand1x1.forward(&s)?.relu()?;
        let b = self.expand3x3.forward(&s)?.relu()?;
        Ok(Tensor::cat(&[a, b], 1)?)
    }
}

fn pool() -> Result<Box<dyn Layer>> {
    boxed(MaxPool {
        kernel: 3,
        stride: 2,
        padding: 0,
        ceil: true,
    })
}

pub(crate) fn build(b: &mut NetBuilder, root: &Scope, num_classes: usize) -> Result<()> {
    let f = root.pp("features");
    b.push("conv1", || {
        boxed(ConvBnAct::plain(
            &f.pp(0),
            ConvSpec::new(3, 64, 3).stride(2).bias(true),
            Some(Activation::Relu),
        )?)
    })?;
    b.push("pool1", pool)?;
    // (fire id, torchvision index, c_in, squeeze, expand)
    let fires: [(usize, usize, usize, usize, usize); 8] = [
        (2, 3, 64, 16, 64),
        (3, 4, 128, 16, 64),
        (4, 6, 128, 32, 128),
        (5, 7, 256, 32, 128),
        (6, 9, 256, 48, 192),
        (7, 10, 384, 48, 192),
        (8, 11, 384, 64, 256),
        (9, 12, 512, 64, 256),
    ];
    for (id, idx, c_in, sq, ex) in fires {
        b.push(format!("fire{id}/concat"), || boxed(Fire::new(&f.pp(idx), c_in, sq, ex)?))?;
        if id == 3 || id == 5 {
            b.push(format!("pool{id}"), pool)?;
        }
    }
    let c = root.pp("classifier");
    b.push("dropout", || boxed(DropoutLayer(Dropout::new(0.5, 10))))?;
    b.push("conv10", || {
        boxed(ConvOnly(Conv2d::new(&c.pp(1), ConvSpec::new(512, num_classes, 1).bias(true))?))
    })?;
    b.push("relu10", || boxed(Act(Activation::Relu)))?;
    b.push("pool10", || boxed(GlobalPool))?;
    Ok(())
}
