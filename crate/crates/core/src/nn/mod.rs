//! Minimal network building blocks on top of candle tensors.

mod batchnorm;
mod depthwise;
pub mod layers;
pub mod optim;
pub mod params;

use candle_core::Tensor;

use crate::error::{Error, Result};

pub use optim::{Adam, AdamConfig, OptimParam};
pub use params::{Init, ParamEntry, ParamRole, ParamStore, Scope};

/// Forward-pass mode. `seed` drives dropout masks in training mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ctx {
    pub train: bool,
    pub seed: u64,
}

impl Ctx {
    pub fn eval() -> Self {
        Self { train: false, seed: 0 }
    }

    pub fn train(seed: u64) -> Self {
        Self { train: true, seed }
    }
}

pub trait Layer: Send + Sync + std::fmt::Debug {
    fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor>;
}

/// Wraps a closure-free elementwise op as a named stage.
#[derive(Debug, Clone, Copy)]
pub struct Act(pub layers::Activation);

impl Layer for Act {
    fn forward(&self, x: &Tensor, _ctx: &Ctx) -> Result<Tensor> {
        self.0.apply(x)
    }
}

#[derive(Debug)]
pub struct Stage {
    pub name: String,
    pub layer: Box<dyn Layer>,
}

/// A chain of named stages. Stage names are the tap points used for
/// truncation and for Grad-CAM.
#[derive(Debug, Default)]
pub struct SequentialNet {
    stages: Vec<Stage>,
}

impl SequentialNet {
    pub fn stage_names(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn push(&mut self, name: impl Into<String>, layer: Box<dyn Layer>) {
        self.stages.push(Stage {
            name: name.into(),
            layer,
        });
    }

    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        self.stages
            .iter()
            .try_fold(x.clone(), |h, s| s.layer.forward(&h, ctx))
    }

    fn position(&self, name: &str) -> Result<usize> {
        self.stages
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownLayer {
                layer: name.to_string(),
                candidates: self.stage_names().join(", "),
            })
    }

    /// Output of stage `name`.
    pub fn forward_until(&self, x: &Tensor, name: &str, ctx: &Ctx) -> Result<Tensor> {
        let end = self.position(name)?;
        self.stages[..=end]
            .iter()
            .try_fold(x.clone(), |h, s| s.layer.forward(&h, ctx))
    }

    /// Continue from the output of stage `name` to the end.
    pub fn forward_from(&self, activation: &Tensor, name: &str, ctx: &Ctx) -> Result<Tensor> {
        let start = self.position(name)? + 1;
        self.stages[start..]
            .iter()
            .try_fold(activation.clone(), |h, s| s.layer.forward(&h, ctx))
    }
}

/// Builds a [`SequentialNet`], optionally stopping after a named stage.
///
/// In dry mode constructors are never called and only names are recorded,
/// which lets callers validate a truncation point before allocating weights.
pub struct NetBuilder {
    net: SequentialNet,
    names: Vec<String>,
    stop_after: Option<String>,
    stopped: bool,
    dry: bool,
}

impl NetBuilder {
    pub fn new(stop_after: Option<&str>) -> Self {
        Self {
            net: SequentialNet::default(),
            names: Vec::new(),
            stop_after: stop_after.map(str::to_string),
            stopped: false,
            dry: false,
        }
    }

    pub fn dry() -> Self {
        Self {
            dry: true,
            ..Self::new(None)
        }
    }

    pub fn done(&self) -> bool {
        self.stopped
    }

    pub fn push<F>(&mut self, name: impl Into<String>, make: F) -> Result<()>
    where
        F: FnOnce() -> Result<Box<dyn Layer>>,
    {
        let name = name.into();
        self.names.push(name.clone());
        if self.stopped || self.dry {
            return Ok(());
        }
        self.net.push(name.clone(), make()?);
        if self.stop_after.as_deref() == Some(name.as_str()) {
            self.stopped = true;
        }
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn finish(self) -> Result<SequentialNet> {
        if let Some(anchor) = &self.stop_after {
            if !self.stopped {
                return Err(Error::UnknownLayer {
                    layer: anchor.clone(),
                    candidates: self.names.join(", "),
                });
            }
        }
        Ok(self.net)
    }
}
