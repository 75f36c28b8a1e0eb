//! Depthwise convolution as a candle custom op. Autograd through a
//! composition of shifted slices keeps a full-size intermediate per tap;
//! this op keeps only its inputs.

use candle_core::{CpuStorage, CustomOp2, Layout, Result, Shape, Tensor, WithDType};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    /// Input coordinate hit by output `o` and tap `t`, if inside the image.
    fn src(&self, o: usize, t: usize, len: usize) -> Option<usize> {
        (o * self.stride + t).checked_sub(self.pad).filter(|&v| v < len)
    }
}

fn slice<'a, T: WithDType>(s: &'a CpuStorage, l: &Layout, what: &str) -> Result<&'a [T]> {
    let (start, end) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg(format!("depthwise conv: {what} must be contiguous")))?;
    Ok(&s.as_slice::<T>()?[start..end])
}

fn forward<T: WithDType>(x: &[T], wt: &[T], g: Geom) -> Vec<T> {
    let mut y = vec![T::zero(); x.len() / (g.h * g.w) * g.oh * g.ow];
    y.par_chunks_mut(g.oh * g.ow).enumerate().for_each(|(plane, out)| {
        let xs = &x[plane * g.h * g.w..][..g.h * g.w];
        let ws = &wt[(plane % g.c) * g.k * g.k..][..g.k * g.k];
        for oy in 0..g.oh {
            for i in 0..g.k {
                let Some(sy) = g.src(oy, i, g.h) else { continue };
                for ox in 0..g.ow {
                    let mut acc = out[oy * g.ow + ox];
                    for j in 0..g.k {
                        if let Some(sx) = g.src(ox, j, g.w) {
                            acc += xs[sy * g.w + sx] * ws[i * g.k + j];
                        }
                    }
                    out[oy * g.ow + ox] = acc;
                }
            }
        }
    });
    y
}

fn input_grad<T: WithDType>(gy: &[T], wt: &[T], g: Geom) -> Vec<T> {
    let mut gx = vec![T::zero(); gy.len() / (g.oh * g.ow) * g.h * g.w];
    gx.par_chunks_mut(g.h * g.w).enumerate().for_each(|(plane, out)| {
        let gs = &gy[plane * g.oh * g.ow..][..g.oh * g.ow];
        let ws = &wt[(plane % g.c) * g.k * g.k..][..g.k * g.k];
        for oy in 0..g.oh {
            for i in 0..g.k {
                let Some(sy) = g.src(oy, i, g.h) else { continue };
                for ox in 0..g.ow {
                    let go = gs[oy * g.ow + ox];
                    for j in 0..g.k {
                        if let Some(sx) = g.src(ox, j, g.w) {
                            out[sy * g.w + sx] += go * ws[i * g.k + j];
                        }
                    }
                }
            }
        }
    });
    gx
}

fn weight_grad<T: WithDType>(x: &[T], gy: &[T], g: Geom) -> Vec<T> {
    let planes = x.len() / (g.h * g.w);
    let n = planes / g.c;
    let mut gw = vec![T::zero(); g.c * g.k * g.k];
    gw.par_chunks_mut(g.k * g.k).enumerate().for_each(|(ch, out)| {
        for b in 0..n {
            let plane = b * g.c + ch;
            let xs = &x[plane * g.h * g.w..][..g.h * g.w];
            let gs = &gy[plane * g.oh * g.ow..][..g.oh * g.ow];
            for i in 0..g.k {
                for j in 0..g.k {
                    let mut acc = T::zero();
                    for oy in 0..g.oh {
                        let Some(sy) = g.src(oy, i, g.h) else { continue };
                        for ox in 0..g.ow {
                            if let Some(sx) = g.src(ox, j, g.w) {
                                acc += xs[sy * g.w + sx] * gs[oy * g.ow + ox];
                            }
                        }
                    }
                    out[i * g.k + j] += acc;
                }
            }
        }
    });
    gw
}

macro_rules! dispatch {
    ($s:expr, $name:literal, |$t:ident| $body:expr) => {
        match $s {
            CpuStorage::F32(_) => {
                type $t = f32;
                $body
            }
            CpuStorage::F64(_) => {
                type $t = f64;
                $body
            }
            _ => Err(candle_core::Error::Msg(format!("{} supports f32 and f64 only", $name))),
        }
    };
}

struct Forward(Geom);

impl CustomOp2 for Forward {
    fn name(&self) -> &'static str {
        "depthwise-conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let g = self.0;
        let n = l1.dims()[0];
        dispatch!(s1, "depthwise-conv2d", |T| {
            let y = forward::<T>(slice(s1, l1, "input")?, slice(s2, l2, "weight")?, g);
            Ok((T::to_cpu_storage_owned(y), Shape::from((n, g.c, g.oh, g.ow))))
        })
    }

    fn bwd(&self, x: &Tensor, wt: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let gx = grad.apply_op2_no_bwd(wt, &InputGrad(self.0))?;
        let gw = x.apply_op2_no_bwd(&grad, &WeightGrad(self.0))?;
        Ok((Some(gx), Some(gw)))
    }
}

struct InputGrad(Geom);

impl CustomOp2 for InputGrad {
    fn name(&self) -> &'static str {
        "depthwise-conv2d-input-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let g = self.0;
        let n = l1.dims()[0];
        dispatch!(s1, "depthwise-conv2d-input-grad", |T| {
            let gx = input_grad::<T>(slice(s1, l1, "gradient")?, slice(s2, l2, "weight")?, g);
            Ok((T::to_cpu_storage_owned(gx), Shape::from((n, g.c, g.h, g.w))))
        })
    }
}

struct WeightGrad(Geom);

impl CustomOp2 for WeightGrad {
    fn name(&self) -> &'static str {
        "depthwise-conv2d-weight-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let g = self.0;
        dispatch!(s1, "depthwise-conv2d-weight-grad", |T| {
            let gw = weight_grad::<T>(slice(s1, l1, "input")?, slice(s2, l2, "gradient")?, g);
            Ok((T::to_cpu_storage_owned(gw), Shape::from((g.c, 1, g.k, g.k))))
        })
    }
}

/// `x`: `N×C×H×W`, `weight`: `C×1×k×k`, symmetric zero padding.
pub fn depthwise_conv2d(x: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    let (wc, _, k, _) = weight.dims4()?;
    if wc != c || h + 2 * padding < k || w + 2 * padding < k {
        return Err(candle_core::Error::Msg(format!(
            "depthwise conv: input {:?} incompatible with weight {:?}",
            x.dims(),
            weight.dims()
        )));
    }
    let g = Geom {
        c,
        h,
        w,
        k,
        oh: (h + 2 * padding - k) / stride + 1,
        ow: (w + 2 * padding - k) / stride + 1,
        stride,
        pad: padding,
    };
    x.contiguous()?.apply_op2(&weight.contiguous()?, Forward(g))
}
