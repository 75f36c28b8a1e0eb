use candle_core::{DType, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Init, ParamRole, Scope};
use super::Ctx;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: 0,
            groups: 1,
            bias: false,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    /// Padding `kernel / 2`, which keeps the spatial size at stride 1.
    pub fn same(mut self) -> Self {
        self.padding = self.kernel / 2;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * (self.in_channels / self.groups) * self.kernel * self.kernel
            + if self.bias { self.out_channels } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub spec: ConvSpec,
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Conv2d {
    pub fn new(scope: &Scope, spec: ConvSpec) -> Result<Self> {
        let fan_in = spec.in_channels / spec.groups * spec.kernel * spec.kernel;
        let weight = scope.param(
            "weight",
            (spec.out_channels, spec.in_channels / spec.groups, spec.kernel, spec.kernel),
            ParamRole::Weight,
            Init::KaimingNormal { fan_in },
        )?;
        let bias = if spec.bias {
            Some(scope.param("bias", spec.out_channels, ParamRole::Bias, Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { spec, weight, bias })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = &self.spec;
        let y = if s.groups > 1 && s.groups == s.in_channels && s.groups == s.out_channels {
            depthwise_conv2d(x, &self.weight, s.stride, s.padding)?
        } else {
            x.conv2d(&self.weight, s.padding, s.stride, 1, s.groups)?
        };
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, s.out_channels, 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Per-channel convolution as a sum of shifted, scaled input views. Much
/// faster on CPU than splitting into one convolution per channel, and fully
/// differentiable through elementary ops.
pub fn depthwise_conv2d(x: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    Ok(super::depthwise::depthwise_conv2d(x, weight, stride, padding)?)
}

/// `out[.., y, x] = xp[.., i + y·stride, j + x·stride]`, built from narrow and
/// reshape only so it stays differentiable. `xp` must extend at least
/// `oh·stride + i` rows and `ow·stride + j` columns.
fn tap_window(xp: &Tensor, i: usize, j: usize, oh: usize, ow: usize, stride: usize) -> Result<Tensor> {
    let (n, c, _, wp) = xp.dims4()?;
    let rows = xp.narrow(2, i, oh * stride)?;
    let rows = if stride > 1 {
        rows.reshape((n, c, oh, stride, wp))?.narrow(3, 0, 1)?.squeeze(3)?
    } else {
        rows
    };
    let win = rows.narrow(3, j, ow * stride)?;
    Ok(if stride > 1 {
        win.reshape((n, c, oh, ow, stride))?.narrow(4, 0, 1)?.squeeze(4)?
    } else {
        win
    })
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    scale: Tensor,
    shift: Tensor,
    running_mean: Var,
    running_var: Var,
    channels: usize,
    eps: f64,
    momentum: f64,
}

impl BatchNorm2d {
    pub fn new(scope: &Scope, channels: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            scale: scope.param("weight", channels, ParamRole::Scale, Init::Ones)?,
            shift: scope.param("bias", channels, ParamRole::Shift, Init::Zeros)?,
            running_mean: scope.buffer("running_mean", channels, ParamRole::RunningMean, Init::Zeros)?,
            running_var: scope.buffer("running_var", channels, ParamRole::RunningVar, Init::Ones)?,
            channels,
            eps,
            momentum: 0.1,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Training mode normalizes with batch statistics and folds them into
    /// the running averages; evaluation mode uses the running averages only.
    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let c = self.channels;
        if ctx.train {
            let (n, _, h, w) = x.dims4()?;
            let count = n * h * w;
            let (mean, var) = super::batchnorm::batch_stats(x)?;
            let m = self.momentum;
            let unbiased = if count > 1 {
                (var * (count as f64 / (count - 1) as f64))?
            } else {
                var
            };
            let dtype = self.running_mean.dtype();
            self.running_mean
                .set(&((self.running_mean.as_tensor() * (1.0 - m))? + (mean.to_dtype(dtype)? * m)?)?)?;
            self.running_var
                .set(&((self.running_var.as_tensor() * (1.0 - m))? + (unbiased.to_dtype(dtype)? * m)?)?)?;
            return Ok(super::batchnorm::batch_norm_train(x, &self.scale, &self.shift, self.eps)?);
        }
        let mean = self.running_mean.as_tensor().detach().reshape((1, c, 1, 1))?;
        let var = self.running_var.as_tensor().detach().reshape((1, c, 1, 1))?;
        let inv_std = (var + self.eps)?.sqrt()?.recip()?;
        let xn = x.broadcast_sub(&mean)?.broadcast_mul(&inv_std)?;
        Ok(xn
            .broadcast_mul(&self.scale.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.shift.reshape((1, c, 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(scope: &Scope, in_features: usize, out_features: usize) -> Result<Self> {
        let bound = 1.0 / (in_features as f64).sqrt();
        Ok(Self {
            weight: scope.param("weight", (out_features, in_features), ParamRole::Weight, Init::Uniform { bound })?,
            bias: scope.param("bias", out_features, ParamRole::Bias, Init::Uniform { bound })?,
            in_features,
            out_features,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Relu6,
    /// `x * sigmoid(x)`.
    Swish,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Activation::Relu => x.relu()?,
            Activation::Relu6 => x.relu()?.minimum(6.0)?,
            Activation::Swish => x.silu()?,
            Activation::Sigmoid => sigmoid(x)?,
        })
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// Pad `dim` with a constant value on both sides.
pub fn pad_const(x: &Tensor, dim: usize, left: usize, right: usize, value: f64) -> Result<Tensor> {
    if left == 0 && right == 0 {
        return Ok(x.clone());
    }
    let mut parts = Vec::with_capacity(3);
    let mut dims = x.dims().to_vec();
    if left > 0 {
        dims[dim] = left;
        parts.push((Tensor::ones(dims.as_slice(), x.dtype(), x.device())? * value)?);
    }
    parts.push(x.clone());
    if right > 0 {
        dims[dim] = right;
        parts.push((Tensor::ones(dims.as_slice(), x.dtype(), x.device())? * value)?);
    }
    Ok(Tensor::cat(&parts, dim)?)
}

fn pooled_len(len: usize, kernel: usize, stride: usize, padding: usize, ceil: bool) -> usize {
    let span = len + 2 * padding - kernel;
    let mut out = if ceil { span.div_ceil(stride) + 1 } else { span / stride + 1 };
    // a window may not start entirely inside the right padding
    if ceil && (out - 1) * stride >= len + padding {
        out -= 1;
    }
    out
}

/// Max pooling with symmetric padding and optional ceil rounding; padded
/// cells never win the max. Overlapping windows are taken as an
/// elementwise max over shifted views because candle has no backward pass
/// for them.
pub fn max_pool2d(x: &Tensor, kernel: usize, stride: usize, padding: usize, ceil: bool) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let oh = pooled_len(h, kernel, stride, padding, ceil);
    let ow = pooled_len(w, kernel, stride, padding, ceil);
    let need_h = (oh - 1) * stride + kernel;
    let need_w = (ow - 1) * stride + kernel;
    let low = match x.dtype() {
        DType::F64 => f64::MIN,
        _ => f32::MIN as f64,
    };
    if kernel == stride {
        let xp = pad_const(x, 2, padding, need_h.saturating_sub(h + padding), low)?;
        let xp = pad_const(&xp, 3, padding, need_w.saturating_sub(w + padding), low)?;
        return Ok(xp.max_pool2d_with_stride(kernel, stride)?);
    }
    let span_h = (kernel - 1 + oh * stride).max(need_h);
    let span_w = (kernel - 1 + ow * stride).max(need_w);
    let xp = pad_const(x, 2, padding, span_h - h - padding, low)?;
    let xp = pad_const(&xp, 3, padding, span_w - w - padding, low)?;
    let mut acc: Option<Tensor> = None;
    for i in 0..kernel {
        for j in 0..kernel {
            let win = tap_window(&xp, i, j, oh, ow, stride)?;
            acc = Some(match acc {
                Some(a) => a.maximum(&win)?,
                None => win,
            });
        }
    }
    Ok(acc.expect("kernel has at least one tap"))
}

/// Average pooling counting zero padding in the denominator.
pub fn avg_pool2d(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if kernel == stride {
        let xp = x
            .pad_with_zeros(2, padding, padding)?
            .pad_with_zeros(3, padding, padding)?;
        return Ok(xp.avg_pool2d_with_stride(kernel, stride)?);
    }
    let oh = (h + 2 * padding - kernel) / stride + 1;
    let ow = (w + 2 * padding - kernel) / stride + 1;
    let span_h = kernel - 1 + oh * stride;
    let span_w = kernel - 1 + ow * stride;
    let xp = x
        .pad_with_zeros(2, padding, span_h.saturating_sub(h + padding))?
        .pad_with_zeros(3, padding, span_w.saturating_sub(w + padding))?;
    let mut acc: Option<Tensor> = None;
    for i in 0..kernel {
        for j in 0..kernel {
            let win = tap_window(&xp, i, j, oh, ow, stride)?;
            acc = Some(match acc {
                Some(a) => (a + win)?,
                None => win,
            });
        }
    }
    Ok((acc.expect("kernel has at least one tap") / (kernel * kernel) as f64)?)
}

/// `N × C × H × W → N × C`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}

/// Inverted dropout with a mask drawn from the context seed.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    tag: u64,
}

impl Dropout {
    pub fn new(p: f64, tag: u64) -> Self {
        Self { p, tag }
    }

    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        if !ctx.train || self.p == 0.0 {
            return Ok(x.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive_seed(ctx.seed, "dropout", self.tag));
        let keep = 1.0 - self.p;
        let mask: Vec<f32> = (0..x.elem_count())
            .map(|_| if rng.gen_bool(keep) { (1.0 / keep) as f32 } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok((x * mask)?)
    }
}

/// Interleave channel groups: `(g, c/g) → (c/g, g)`.
pub fn channel_shuffle(x: &Tensor, groups: usize) -> Result<Tensor> {
    if groups <= 1 {
        return Ok(x.clone());
    }
    let (n, c, h, w) = x.dims4()?;
    Ok(x.reshape((n, groups, c / groups, h, w))?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((n, c, h, w))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;
    use candle_core::Device;

    #[test]
    fn depthwise_matches_grouped_conv() {
        let dev = Device::Cpu;
        for (k, stride, pad, size) in [(3, 1, 1, 9), (3, 2, 1, 10), (5, 2, 2, 11), (5, 1, 2, 7), (3, 2, 1, 7)] {
            let x = Tensor::randn(0f32, 1.0, (2, 4, size, size), &dev).unwrap();
            let w = Tensor::randn(0f32, 1.0, (4, 1, k, k), &dev).unwrap();
            let fast = depthwise_conv2d(&x, &w, stride, pad).unwrap();
            let slow = x.conv2d(&w, pad, stride, 1, 4).unwrap();
            assert_eq!(fast.dims(), slow.dims());
            let diff = (fast - slow).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
            assert!(diff < 1e-4, "k={k} s={stride}: {diff}");
        }
    }

    #[test]
    fn overlapping_max_pool_matches_candle_and_backprops() {
        let dev = Device::Cpu;
        for (size, pad, ceil) in [(111, 0, true), (112, 1, false), (13, 0, true), (8, 1, false)] {
            let x = candle_core::Var::from_tensor(&Tensor::randn(0f32, 1.0, (2, 3, size, size), &dev).unwrap()).unwrap();
            let ours = max_pool2d(x.as_tensor(), 3, 2, pad, ceil).unwrap();
            let oh = pooled_len(size, 3, 2, pad, ceil);
            let need = (oh - 1) * 2 + 3;
            let low = f32::MIN as f64;
            let xp = pad_const(x.as_tensor(), 2, pad, need.saturating_sub(size + pad), low).unwrap();
            let xp = pad_const(&xp, 3, pad, need.saturating_sub(size + pad), low).unwrap();
            let reference = xp.max_pool2d_with_stride(3, 2).unwrap();
            assert_eq!(ours.dims(), reference.dims());
            let diff = (&ours - &reference).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
            assert_eq!(diff, 0.0);
            // each output routes its gradient to exactly one input
            let grads = ours.sum_all().unwrap().backward().unwrap();
            let g = grads.get(x.as_tensor()).unwrap();
            let total = g.sum_all().unwrap().to_scalar::<f32>().unwrap();
            assert!((total - ours.elem_count() as f32).abs() < 1e-3, "{total}");
        }
    }

    #[test]
    fn overlapping_avg_pool_matches_candle_and_backprops() {
        let dev = Device::Cpu;
        for size in [56, 28, 14, 9] {
            let x = candle_core::Var::from_tensor(&Tensor::randn(0f32, 1.0, (2, 3, size, size), &dev).unwrap()).unwrap();
            let ours = avg_pool2d(x.as_tensor(), 3, 2, 1).unwrap();
            let reference = x
                .as_tensor()
                .pad_with_zeros(2, 1, 1)
                .unwrap()
                .pad_with_zeros(3, 1, 1)
                .unwrap()
                .avg_pool2d_with_stride(3, 2)
                .unwrap();
            assert_eq!(ours.dims(), reference.dims());
            let diff = (&ours - &reference).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
            assert!(diff < 1e-5, "{diff}");
            assert!(ours.sum_all().unwrap().backward().unwrap().get(x.as_tensor()).is_some());
        }
    }

    #[test]
    fn depthwise_gradients_match_finite_differences() {
        let dev = Device::Cpu;
        for (k, stride, pad, size) in [(3, 1, 1, 5), (3, 2, 1, 6), (5, 2, 2, 7)] {
            let x = candle_core::Var::from_tensor(&Tensor::randn(0f64, 1.0, (2, 3, size, size), &dev).unwrap()).unwrap();
            let w = candle_core::Var::from_tensor(&Tensor::randn(0f64, 1.0, (3, 1, k, k), &dev).unwrap()).unwrap();
            let probe = Tensor::randn(0f64, 1.0, depthwise_conv2d(&x, &w, stride, pad).unwrap().shape(), &dev).unwrap();
            let loss = |x: &Tensor, w: &Tensor| {
                depthwise_conv2d(x, w, stride, pad).unwrap().mul(&probe).unwrap().sum_all().unwrap()
            };
            let grads = loss(x.as_tensor(), w.as_tensor()).backward().unwrap();
            for var in [&x, &w] {
                let analytic = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
                let base = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
                for (i, a) in analytic.iter().enumerate() {
                    let at = |d: f64| {
                        let mut v = base.clone();
                        v[i] += d;
                        var.set(&Tensor::from_vec(v, var.shape(), &dev).unwrap()).unwrap();
                        loss(x.as_tensor(), w.as_tensor()).to_scalar::<f64>().unwrap()
                    };
                    let numeric = (at(1e-4) - at(-1e-4)) / 2e-4;
                    assert!((numeric - a).abs() < 1e-6, "k={k} s={stride}: {numeric} vs {a}");
                }
                var.set(&Tensor::from_vec(base, var.shape(), &dev).unwrap()).unwrap();
            }
        }
    }

    #[test]
    fn fused_batchnorm_matches_composed_ops_and_differences() {
        let dev = Device::Cpu;
        let x = candle_core::Var::from_tensor(&Tensor::randn(0.5f64, 2.0, (3, 2, 4, 5), &dev).unwrap()).unwrap();
        let gamma = candle_core::Var::from_tensor(&Tensor::new(&[1.5f64, -0.7], &dev).unwrap()).unwrap();
        let beta = candle_core::Var::from_tensor(&Tensor::new(&[0.2f64, 0.1], &dev).unwrap()).unwrap();
        let probe = Tensor::randn(0f64, 1.0, (3, 2, 4, 5), &dev).unwrap();
        let eps = 1e-5;

        let fused = |x: &Tensor, g: &Tensor, b: &Tensor| super::super::batchnorm::batch_norm_train(x, g, b, eps).unwrap();
        let mean = x.as_tensor().mean_keepdim(0).unwrap().mean_keepdim(2).unwrap().mean_keepdim(3).unwrap();
        let centered = x.as_tensor().broadcast_sub(&mean).unwrap();
        let var = centered.sqr().unwrap().mean_keepdim(0).unwrap().mean_keepdim(2).unwrap().mean_keepdim(3).unwrap();
        let composed = centered
            .broadcast_div(&(var + eps).unwrap().sqrt().unwrap())
            .unwrap()
            .broadcast_mul(&gamma.as_tensor().reshape((1, 2, 1, 1)).unwrap())
            .unwrap()
            .broadcast_add(&beta.as_tensor().reshape((1, 2, 1, 1)).unwrap())
            .unwrap();
        let y = fused(x.as_tensor(), gamma.as_tensor(), beta.as_tensor());
        let diff = (&y - &composed).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12, "{diff}");

        let loss = |x: &Tensor, g: &Tensor, b: &Tensor| fused(x, g, b).mul(&probe).unwrap().sum_all().unwrap();
        let grads = loss(x.as_tensor(), gamma.as_tensor(), beta.as_tensor()).backward().unwrap();
        for var in [&x, &gamma, &beta] {
            let analytic = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let base = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            for (i, a) in analytic.iter().enumerate() {
                let at = |d: f64| {
                    let mut v = base.clone();
                    v[i] += d;
                    var.set(&Tensor::from_vec(v, var.shape(), &dev).unwrap()).unwrap();
                    loss(x.as_tensor(), gamma.as_tensor(), beta.as_tensor()).to_scalar::<f64>().unwrap()
                };
                let numeric = (at(1e-5) - at(-1e-5)) / 2e-5;
                assert!((numeric - a).abs() < 1e-6, "{numeric} vs {a}");
            }
            var.set(&Tensor::from_vec(base, var.shape(), &dev).unwrap()).unwrap();
        }
    }

    #[test]
    fn ceil_max_pool_13_to_7() {
        let x = Tensor::randn(0f32, 1.0, (1, 2, 13, 13), &Device::Cpu).unwrap();
        let y = max_pool2d(&x, 2, 2, 0, true).unwrap();
        assert_eq!(y.dims(), &[1, 2, 7, 7]);
        let floor = max_pool2d(&x, 2, 2, 0, false).unwrap();
        assert_eq!(floor.dims(), &[1, 2, 6, 6]);
        // the last ceil window covers only the final row/column
        let last = y.get(0).unwrap().get(0).unwrap().get(6).unwrap().get(6).unwrap().to_scalar::<f32>().unwrap();
        let src = x.get(0).unwrap().get(0).unwrap().get(12).unwrap().get(12).unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(last, src);
    }

    #[test]
    fn squeezenet_pool_sizes() {
        assert_eq!(pooled_len(111, 3, 2, 0, true), 55);
        assert_eq!(pooled_len(55, 3, 2, 0, true), 27);
        assert_eq!(pooled_len(27, 3, 2, 0, true), 13);
        assert_eq!(pooled_len(112, 3, 2, 1, false), 56);
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let store = ParamStore::new(DType::F32, &Device::Cpu, 0);
        let bn = BatchNorm2d::new(&store.root(), 3, 1e-5).unwrap();
        let x = Tensor::randn(2f32, 3.0, (4, 3, 5, 5), &Device::Cpu).unwrap();
        let eval = bn.forward(&x, &Ctx::eval()).unwrap();
        let diff = (eval - (&x / (1.0f64 + 1e-5).sqrt()).unwrap()).unwrap().abs().unwrap().max_all().unwrap();
        assert!(diff.to_scalar::<f32>().unwrap() < 1e-5);
        let train = bn.forward(&x, &Ctx::train(0)).unwrap();
        let m = train.mean_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(m.abs() < 1e-4);
        let rm = store.get("running_mean").unwrap().var.as_tensor().to_vec1::<f32>().unwrap();
        assert!(rm.iter().all(|v| *v > 0.05));
    }

    #[test]
    fn shuffle_interleaves() {
        let x = Tensor::arange(0f32, 6.0, &Device::Cpu).unwrap().reshape((1, 6, 1, 1)).unwrap();
        let y = channel_shuffle(&x, 2).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(y, vec![0., 3., 1., 4., 2., 5.]);
    }

    #[test]
    fn conv_param_count() {
        assert_eq!(ConvSpec::new(2336, 3, 1).bias(true).param_count(), 7011);
        assert_eq!(ConvSpec::new(96, 96, 3).groups(96).param_count(), 864);
    }
}
