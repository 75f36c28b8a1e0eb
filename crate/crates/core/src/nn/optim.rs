use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::Result;

/// A variable with its learning-rate and L2 multipliers.
#[derive(Debug, Clone)]
pub struct OptimParam {
    pub var: Var,
    pub lr_factor: f64,
    pub l2_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 penalty: `λ·w` is added to the gradient before the moment
    /// updates.
    pub l2: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, l2: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2,
        }
    }
}

/// Adam with per-parameter learning-rate factors.
#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    params: Vec<OptimParam>,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
    t: u64,
}

impl Adam {
    pub fn new(params: Vec<OptimParam>, cfg: AdamConfig) -> Self {
        let n = params.len();
        Self {
            cfg,
            params,
            m: vec![None; n],
            v: vec![None; n],
            t: 0,
        }
    }

    pub fn params(&self) -> &[OptimParam] {
        &self.params
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, p) in self.params.iter().enumerate() {
            let Some(g) = grads.get(p.var.as_tensor()) else {
                continue;
            };
            let w = p.var.as_tensor().detach();
            let g = if c.l2 * p.l2_factor != 0.0 {
                (g + (&w * (c.l2 * p.l2_factor))?)?
            } else {
                g.clone()
            };
            let m = match &self.m[i] {
                Some(m) => ((m * c.beta1)? + (&g * (1.0 - c.beta1))?)?,
                None => (&g * (1.0 - c.beta1))?,
            };
            let v = match &self.v[i] {
                Some(v) => ((v * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?,
                None => (g.sqr()? * (1.0 - c.beta2))?,
            };
            let m_hat = (&m / bc1)?;
            let v_hat = (&v / bc2)?;
            let update = (m_hat / (v_hat.sqrt()? + c.eps)?)?;
            p.var.set(&(w - (update * (c.lr * p.lr_factor))?)?)?;
            self.m[i] = Some(m);
            self.v[i] = Some(v);
        }
        Ok(())
    }
}
