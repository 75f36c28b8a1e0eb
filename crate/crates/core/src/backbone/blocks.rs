//! Stage-level layers shared by the backbone definitions.

use candle_core::Tensor;

use crate::error::Result;
use crate::nn::layers::{global_avg_pool, max_pool2d, Activation, BatchNorm2d, Conv2d, ConvSpec, Dropout, Linear};
use crate::nn::{Ctx, Layer, Scope};

/// Convolution, optional batch norm, optional activation. Stored under
/// `<scope>.0` (conv) and `<scope>.1` (norm), the torchvision convention.
#[derive(Debug)]
pub struct ConvBnAct {
    pub conv: Conv2d,
    pub bn: Option<BatchNorm2d>,
    pub act: Option<Activation>,
}

impl ConvBnAct {
    pub fn new(s: &Scope, spec: ConvSpec, act: Option<Activation>, eps: f64) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&s.pp(0), spec)?,
            bn: Some(BatchNorm2d::new(&s.pp(1), spec.out_channels, eps)?),
            act,
        })
    }

    pub fn plain(s: &Scope, spec: ConvSpec, act: Option<Activation>) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(s, spec)?,
            bn: None,
            act,
        })
    }
}

impl Layer for ConvBnAct {
    fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let mut h = self.conv.forward(x)?;
        if let Some(bn) = &self.bn {
            h = bn.forward(&h, ctx)?;
        }
        match self.act {
            Some(a) => a.apply(&h),
            None => Ok(h),
        }
    }
}

#[derive(Debug)]
pub struct ConvOnly(pub Conv2d);

impl Layer for ConvOnly {
    fn forward(&self, x: &Tensor, _ctx: &Ctx) -> Result<Tensor> {
        self.0.forward(x)
    }
}

#[derive(Debug)]
pub struct BnOnly(pub BatchNorm2d);

impl Layer for BnOnly {
    fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        self.0.forward(x, ctx)
    }
}

#[derive(Debug)]
pub struct MaxPool {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub ceil: bool,
}

impl Layer for MaxPool {
    fn forward(&self, x: &Tensor, _ctx: &Ctx) -> Result<Tensor> {
        max_pool2d(x, self.kernel, self.stride, self.padding, self.ceil)
    }
}

#[derive(Debug)]
pub struct GlobalPool;

impl Layer for GlobalPool {
    fn forward(&self, x: &Tensor, _ctx: &Ctx) -> Result<Tensor> {
        global_avg_pool(x)
    }
}

#[derive(Debug)]
pub struct DropoutLayer(pub Dropout);

impl Layer for DropoutLayer {
    fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        self.0.forward(x, ctx)
    }
}

#[derive(Debug)]
pub struct Dense(pub Linear);

impl Layer for Dense {
    fn forward(&self, x: &Tensor, _ctx: &Ctx) -> Result<Tensor> {
        self.0.forward(x)
    }
}

pub fn boxed<L: Layer + 'static>(l: L) -> Result<Box<dyn Layer>> {
    Ok(Box::new(l))
}
