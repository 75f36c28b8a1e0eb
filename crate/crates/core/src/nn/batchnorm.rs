//! Training-mode batch normalization as one fused candle op. The composed
//! version records half a dozen full-size intermediates per call, which
//! dominates memory when fine-tuning a backbone on CPU.

use candle_core::{CpuStorage, CustomOp1, CustomOp2, CustomOp3, Layout, Result, Shape, Tensor, WithDType};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
struct Dims {
    n: usize,
    c: usize,
    hw: usize,
}

impl Dims {
    fn of(l: &Layout) -> Result<Self> {
        let (n, c, h, w) = l.shape().dims4()?;
        Ok(Self { n, c, hw: h * w })
    }

    fn count(&self) -> usize {
        self.n * self.hw
    }

    fn planes<'a, T>(&self, x: &'a [T], c: usize) -> impl Iterator<Item = &'a [T]> + 'a {
        let (hw, ch) = (self.hw, self.c);
        (0..self.n).map(move |b| &x[(b * ch + c) * hw..][..hw])
    }
}

fn slice<'a, T: WithDType>(s: &'a CpuStorage, l: &Layout) -> Result<&'a [T]> {
    let (start, end) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("batch norm: inputs must be contiguous".into()))?;
    Ok(&s.as_slice::<T>()?[start..end])
}

/// Per-channel mean and biased variance, accumulated in f64.
fn stats<T: WithDType>(x: &[T], d: Dims) -> Vec<(f64, f64)> {
    (0..d.c)
        .into_par_iter()
        .map(|c| {
            let m = d.count() as f64;
            let sum: f64 = d.planes(x, c).flatten().map(|v| v.to_f64()).sum();
            let mean = sum / m;
            let var = d.planes(x, c).flatten().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / m;
            (mean, var)
        })
        .collect()
}

/// Fill an output of `len` values plane by plane: `f(channel, plane, out)`.
fn per_plane<T: WithDType>(len: usize, d: Dims, f: impl Fn(usize, usize, &mut [T]) + Sync) -> Vec<T> {
    let mut out = vec![T::zero(); len];
    out.par_chunks_mut(d.hw).enumerate().for_each(|(plane, o)| f(plane % d.c, plane, o));
    out
}

macro_rules! dispatch {
    ($s:expr, |$t:ident| $body:expr) => {
        match $s {
            CpuStorage::F32(_) => {
                type $t = f32;
                $body
            }
            CpuStorage::F64(_) => {
                type $t = f64;
                $body
            }
            _ => Err(candle_core::Error::Msg("batch norm supports f32 and f64 only".into())),
        }
    };
}

/// `x → [mean; var]` as a `2×C` tensor.
struct Stats;

impl CustomOp1 for Stats {
    fn name(&self) -> &'static str {
        "batch-norm-stats"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        let d = Dims::of(l)?;
        dispatch!(s, |T| {
            let st = stats::<T>(slice(s, l)?, d);
            let out: Vec<T> = st.iter().map(|p| T::from_f64(p.0)).chain(st.iter().map(|p| T::from_f64(p.1))).collect();
            Ok((T::to_cpu_storage_owned(out), Shape::from((2, d.c))))
        })
    }
}

struct Forward {
    eps: f64,
}

impl CustomOp3 for Forward {
    fn name(&self) -> &'static str {
        "batch-norm-train"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> Result<(CpuStorage, Shape)> {
        let d = Dims::of(l1)?;
        dispatch!(s1, |T| {
            let (x, gamma, beta) = (slice::<T>(s1, l1)?, slice::<T>(s2, l2)?, slice::<T>(s3, l3)?);
            let st = stats(x, d);
            let y = per_plane::<T>(x.len(), d, |c, plane, o| {
                let (mean, var) = st[c];
                let a = gamma[c].to_f64() / (var + self.eps).sqrt();
                let b = beta[c].to_f64() - a * mean;
                for (o, v) in o.iter_mut().zip(&x[plane * d.hw..][..d.hw]) {
                    *o = T::from_f64(a * v.to_f64() + b);
                }
            });
            Ok((T::to_cpu_storage_owned(y), l1.shape().clone()))
        })
    }

    fn bwd(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        _beta: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let params = x.apply_op2_no_bwd(&grad, &ParamGrad { eps: self.eps })?;
        let dx = x.apply_op3_no_bwd(&grad, gamma, &InputGrad { eps: self.eps })?;
        Ok((Some(dx), Some(params.get(0)?), Some(params.get(1)?)))
    }
}

/// Per channel: `Σ g·x̂` and `Σ g`.
fn param_sums<T: WithDType>(x: &[T], g: &[T], d: Dims, st: &[(f64, f64)], eps: f64) -> Vec<(f64, f64)> {
    (0..d.c)
        .into_par_iter()
        .map(|c| {
            let (mean, var) = st[c];
            let inv = 1.0 / (var + eps).sqrt();
            let mut dgamma = 0.0;
            let mut dbeta = 0.0;
            for (xp, gp) in d.planes(x, c).zip(d.planes(g, c)) {
                for (xv, gv) in xp.iter().zip(gp) {
                    let gv = gv.to_f64();
                    dgamma += gv * (xv.to_f64() - mean) * inv;
                    dbeta += gv;
                }
            }
            (dgamma, dbeta)
        })
        .collect()
}

/// `(x, grad) → [dγ; dβ]` as a `2×C` tensor.
struct ParamGrad {
    eps: f64,
}

impl CustomOp2 for ParamGrad {
    fn name(&self) -> &'static str {
        "batch-norm-param-grad"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let d = Dims::of(l1)?;
        dispatch!(s1, |T| {
            let (x, g) = (slice::<T>(s1, l1)?, slice::<T>(s2, l2)?);
            let sums = param_sums(x, g, d, &stats(x, d), self.eps);
            let out: Vec<T> = sums.iter().map(|p| T::from_f64(p.0)).chain(sums.iter().map(|p| T::from_f64(p.1))).collect();
            Ok((T::to_cpu_storage_owned(out), Shape::from((2, d.c))))
        })
    }
}

/// `dx = γ·inv/M · (M·g − Σg − x̂·Σ(g·x̂))`.
struct InputGrad {
    eps: f64,
}

impl CustomOp3 for InputGrad {
    fn name(&self) -> &'static str {
        "batch-norm-input-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> Result<(CpuStorage, Shape)> {
        let d = Dims::of(l1)?;
        dispatch!(s1, |T| {
            let (x, g, gamma) = (slice::<T>(s1, l1)?, slice::<T>(s2, l2)?, slice::<T>(s3, l3)?);
            let st = stats(x, d);
            let sums = param_sums(x, g, d, &st, self.eps);
            let m = d.count() as f64;
            let dx = per_plane::<T>(x.len(), d, |c, plane, o| {
                let (mean, var) = st[c];
                let inv = 1.0 / (var + self.eps).sqrt();
                let (dgamma, dbeta) = sums[c];
                let k = gamma[c].to_f64() * inv / m;
                let xs = &x[plane * d.hw..][..d.hw];
                let gs = &g[plane * d.hw..][..d.hw];
                for ((o, xv), gv) in o.iter_mut().zip(xs).zip(gs) {
                    let xhat = (xv.to_f64() - mean) * inv;
                    *o = T::from_f64(k * (m * gv.to_f64() - dbeta - xhat * dgamma));
                }
            });
            Ok((T::to_cpu_storage_owned(dx), l1.shape().clone()))
        })
    }
}

/// Per-channel batch mean and biased variance, outside the autograd graph.
pub fn batch_stats(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let s = x.detach().contiguous()?.apply_op1_no_bwd(&Stats)?;
    Ok((s.get(0)?, s.get(1)?))
}

/// `γ·(x − mean)/sqrt(var + eps) + β` with batch statistics; `gamma` and
/// `beta` have shape `C`.
pub fn batch_norm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    x.contiguous()?
        .apply_op3(&gamma.contiguous()?, &beta.contiguous()?, Forward { eps })
}
