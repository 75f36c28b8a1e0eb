//! EfficientNet-B0, torchvision parameter layout. Stochastic depth is not
//! applied; the network is only fine-tuned briefly and then frozen.

use candle_core::Tensor;

use super::blocks::{boxed, BnOnly, ConvBnAct, ConvOnly, Dense, DropoutLayer, GlobalPool};
use crate::error::Result;
use crate::nn::layers::{global_avg_pool, sigmoid, Activation, BatchNorm2d, Conv2d, ConvSpec, Dropout, Linear};
use crate::nn::{Act, Ctx, Layer, NetBuilder, Scope};

const BN_EPS: f64 = 1e-5;
pub(crate) const ANCHOR: &str = "head/swish";
/// Last convolution, used for Grad-CAM on the single network.
pub const LAST_CONV: &str = "head/conv";

/// (expansion, kernel, first stride, output channels, repeats)
const STAGES: [(usize, usize, usize, usize, usize); 7] = [
    (1, 3, 1, 16, 1),
    (6, 3, 2, 24, 2),
    (6, 5, 2, 40, 2),
    (6, 3, 2, 80, 3),
    (6, 5, 1, 112, 3),
    (6, 5, 2, 192, 4),
    (6, 3, 1, 320, 1),
];

#[derive(Debug)]
struct SqueezeExcite {
    fc1: Conv2d,
    fc2: Conv2d,
}

impl SqueezeExcite {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, _, _) = x.dims4()?;
        let s = global_avg_pool(x)?.reshape((n, c, 1, 1))?;
        let s = Activation::Swish.apply(&self.fc1.forward(&s)?)?;
        let s = sigmoid(&self.fc2.forward(&s)?)?;
        Ok(x.broadcast_mul(&s)?)
    }
}

#[derive(Debug)]
struct MbConv {
    expand: Option<ConvBnAct>,
    depthwise: ConvBnAct,
    se: SqueezeExcite,
    project: ConvBnAct,
    residual: bool,
}

impl MbConv {
    fn new(s: &Scope, c_in: usize, c_out: usize, kernel: usize, stride: usize, expand: usize) -> Result<Self> {
        let hidden = c_in * expand;
        let blk = s.pp("block");
        let mut idx = 0;
        let expand_layer = if expand != 1 {
            idx += 1;
            Some(ConvBnAct::new(&blk.pp(0), ConvSpec::new(c_in, hidden, 1), Some(Activation::Swish), BN_EPS)?)
        } else {
            None
        };
        let depthwise = ConvBnAct::new(
            &blk.pp(idx),
            ConvSpec::new(hidden, hidden, kernel).stride(stride).same().groups(hidden),
            Some(Activation::Swish),
            BN_EPS,
        )?;
        let squeeze = (c_in / 4).max(1);
        let se_scope = blk.pp(idx + 1);
        let se = SqueezeExcite {
            fc1: Conv2d::new(&se_scope.pp("fc1"), ConvSpec::new(hidden, squeeze, 1).bias(true))?,
            fc2: Conv2d::new(&se_scope.pp("fc2"), ConvSpec::new(squeeze, hidden, 1).bias(true))?,
        };
        let project = ConvBnAct::new(&blk.pp(idx + 2), ConvSpec::new(hidden, c_out, 1), None, BN_EPS)?;
        Ok(Self {
            expand: expand_layer,
            depthwise,
            se,
            project,
            residual: stride == 1 && c_in == c_out,
        })
    }
}

impl Layer for MbConv {
    fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let mut h = match &self.expand {
            Some(e) => e.forward(x, ctx)?,
            None => x.clone(),
        };
        h = self.depthwise.forward(&h, ctx)?;
        h = self.se.forward(&h)?;
        h = self.project.forward(&h, ctx)?;
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
        boxed(ConvBnAct::new(&f.pp(0), ConvSpec::new(3, 32, 3).stride(2).same(), Some(Activation::Swish), BN_EPS)?)
    })?;
    let mut c_in = 32;
    for (si, (e, k, s, c, n)) in STAGES.into_iter().enumerate() {
        for i in 0..n {
            let stride = if i == 0 { s } else { 1 };
            let scope = f.pp(si + 1).pp(i);
            let cin = c_in;
            b.push(format!("block{}.{}", si + 1, i), || boxed(MbConv::new(&scope, cin, c, k, stride, e)?))?;
            c_in = c;
        }
    }
    let head = f.pp(8);
    b.push(LAST_CONV, || boxed(ConvOnly(Conv2d::new(&head.pp(0), ConvSpec::new(c_in, 1280, 1))?)))?;
    b.push("head/bn", || boxed(BnOnly(BatchNorm2d::new(&head.pp(1), 1280, BN_EPS)?)))?;
    b.push(ANCHOR, || boxed(Act(Activation::Swish)))?;
    b.push("pool", || boxed(GlobalPool))?;
    b.push("dropout", || boxed(DropoutLayer(Dropout::new(0.2, 30))))?;
    b.push("classifier", || boxed(Dense(Linear::new(&root.pp("classifier").pp(1), 1280, num_classes)?)))?;
    Ok(())
}
