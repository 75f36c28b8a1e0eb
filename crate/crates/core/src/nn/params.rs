//! Named parameter storage with deterministic initialization.
//!
//! A [`ParamStore`] owns every tensor a network reads, keyed by a dotted
//! path. Architectures request parameters through a [`Scope`]; the store
//! decides whether the request is served from loaded weights, from fresh
//! random initialization, or (for a frozen store) as detached constants that
//! never enter the autograd graph.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
    /// Batch-norm gamma.
    Scale,
    /// Batch-norm beta.
    Shift,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    /// Optimizer-visible parameters; running statistics are state, not
    /// parameters, and are excluded from counts.
    pub fn is_learnable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }

    /// Only convolution and dense weights take L2 regularization.
    pub fn default_l2_factor(self) -> f64 {
        match self {
            ParamRole::Weight => 1.0,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// He normal, `std = sqrt(2 / fan_in)`.
    KaimingNormal { fan_in: usize },
    Uniform { bound: f64 },
    Normal { std: f64 },
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub var: Var,
    pub role: ParamRole,
    /// Randomly initialized in this store rather than loaded.
    pub fresh: bool,
}

impl ParamEntry {
    pub fn numel(&self) -> usize {
        self.var.as_tensor().elem_count()
    }
}

struct Inner {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, usize>,
    source: HashMap<String, Tensor>,
    rng: ChaCha8Rng,
    frozen: bool,
}

#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<Inner>>,
    dtype: DType,
    device: Device,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.lock();
        f.debug_struct("ParamStore")
            .field("entries", &inner.entries.len())
            .field("frozen", &inner.frozen)
            .field("dtype", &self.dtype)
            .finish()
    }
}

impl ParamStore {
    /// Trainable store; every request is freshly initialized from `seed`.
    pub fn new(dtype: DType, device: &Device, seed: u64) -> Self {
        Self::build(dtype, device, seed, HashMap::new(), false)
    }

    /// Trainable store that serves requests from `source` where a tensor of
    /// that name exists and initializes the rest.
    pub fn with_source(source: HashMap<String, Tensor>, dtype: DType, device: &Device, seed: u64) -> Self {
        Self::build(dtype, device, seed, source, false)
    }

    /// Frozen store: requests must be satisfied by `source`; returned tensors
    /// are detached copies that carry no gradient.
    pub fn frozen(source: HashMap<String, Tensor>, dtype: DType, device: &Device) -> Self {
        Self::build(dtype, device, 0, source, true)
    }

    fn build(dtype: DType, device: &Device, seed: u64, source: HashMap<String, Tensor>, frozen: bool) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                entries: Vec::new(),
                by_name: HashMap::new(),
                source,
                rng: ChaCha8Rng::seed_from_u64(seed),
                frozen,
            })),
            dtype,
            device: device.clone(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("parameter store poisoned")
    }

    pub fn root(&self) -> Scope {
        Scope {
            store: self.clone(),
            prefix: String::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn is_frozen(&self) -> bool {
        self.lock().frozen
    }

    pub fn entries(&self) -> Vec<ParamEntry> {
        self.lock().entries.clone()
    }

    pub fn get(&self, name: &str) -> Option<ParamEntry> {
        let inner = self.lock();
        inner.by_name.get(name).map(|&i| inner.entries[i].clone())
    }

    /// Number of learnable scalars (weights, biases, batch-norm affine).
    pub fn learnable_count(&self) -> usize {
        self.lock()
            .entries
            .iter()
            .filter(|e| e.role.is_learnable())
            .map(|e| e.numel())
            .sum()
    }

    /// Learnable scalars the optimizer may touch; zero for a frozen store.
    pub fn trainable_count(&self) -> usize {
        if self.is_frozen() {
            0
        } else {
            self.learnable_count()
        }
    }

    /// Copy of every stored tensor, keyed by name.
    pub fn tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        self.lock()
            .entries
            .iter()
            .map(|e| Ok((e.name.clone(), e.var.as_tensor().copy()?)))
            .collect()
    }

    /// Copies of all stored tensors whose name satisfies `keep`.
    pub fn tensors_where(&self, keep: impl Fn(&str) -> bool) -> Result<HashMap<String, Tensor>> {
        Ok(self.tensors()?.into_iter().filter(|(k, _)| keep(k)).collect())
    }

    /// Overwrite stored values by name. Unknown names are an error.
    pub fn restore(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        let inner = self.lock();
        for (name, t) in values {
            let idx = inner
                .by_name
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            inner.entries[*idx].var.set(t)?;
        }
        Ok(())
    }

    pub fn save_safetensors(&self, path: &Path) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .tensors()?
            .into_iter()
            .map(|(k, v)| Ok((k, v.to_dtype(DType::F32)?)))
            .collect::<Result<_>>()?;
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    fn request(&self, name: String, shape: Shape, role: ParamRole, init: Init) -> Result<Var> {
        let mut inner = self.lock();
        if let Some(&i) = inner.by_name.get(&name) {
            let var = inner.entries[i].var.clone();
            if var.shape() != &shape {
                return Err(Error::Shape(format!(
                    "parameter {name} requested as {shape:?} but stored as {:?}",
                    var.shape()
                )));
            }
            return Ok(var);
        }
        let (tensor, fresh) = match inner.source.get(&name) {
            Some(t) => {
                if t.shape() != &shape {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name} has shape {:?} in the weight source, expected {shape:?}",
                        t.shape()
                    )));
                }
                (t.to_device(&self.device)?.to_dtype(self.dtype)?, false)
            }
            None if inner.frozen => {
                return Err(Error::Checkpoint(format!("frozen store has no parameter {name}")));
            }
            None => (self.init_tensor(&mut inner.rng, &shape, init)?, true),
        };
        let var = Var::from_tensor(&tensor)?;
        let idx = inner.entries.len();
        inner.entries.push(ParamEntry {
            name: name.clone(),
            var: var.clone(),
            role,
            fresh,
        });
        inner.by_name.insert(name, idx);
        Ok(var)
    }

    fn init_tensor(&self, rng: &mut ChaCha8Rng, shape: &Shape, init: Init) -> Result<Tensor> {
        let n = shape.elem_count();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::KaimingNormal { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let d = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Init::Normal { std } => {
                let d = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Init::Uniform { bound } => {
                let d = Uniform::new_inclusive(-bound, bound);
                (0..n).map(|_| d.sample(rng)).collect()
            }
        };
        Ok(Tensor::from_vec(values, shape.clone(), &self.device)?.to_dtype(self.dtype)?)
    }
}

/// A path prefix into a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Scope {
    store: ParamStore,
    prefix: String,
}

impl Scope {
    pub fn pp(&self, name: impl std::fmt::Display) -> Scope {
        Scope {
            store: self.store.clone(),
            prefix: self.path(&name.to_string()),
        }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// A learnable tensor. For a frozen store the result is detached.
    pub fn param(&self, name: &str, shape: impl Into<Shape>, role: ParamRole, init: Init) -> Result<Tensor> {
        let var = self.store.request(self.path(name), shape.into(), role, init)?;
        Ok(if self.store.is_frozen() {
            var.as_tensor().detach()
        } else {
            var.as_tensor().clone()
        })
    }

    /// Mutable non-learnable state such as batch-norm running statistics.
    pub fn buffer(&self, name: &str, shape: impl Into<Shape>, role: ParamRole, init: Init) -> Result<Var> {
        self.store.request(self.path(name), shape.into(), role, init)
    }
}

/// Load a safetensors file into named tensors.
pub fn load_safetensors(path: &Path, device: &Device) -> Result<HashMap<String, Tensor>> {
    Ok(candle_core::safetensors::load(path, device)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded() {
        let a = ParamStore::new(DType::F32, &Device::Cpu, 3);
        let b = ParamStore::new(DType::F32, &Device::Cpu, 3);
        let ta = a.root().pp("x").param("w", (4, 5), ParamRole::Weight, Init::KaimingNormal { fan_in: 5 }).unwrap();
        let tb = b.root().pp("x").param("w", (4, 5), ParamRole::Weight, Init::KaimingNormal { fan_in: 5 }).unwrap();
        assert_eq!(ta.to_vec2::<f32>().unwrap(), tb.to_vec2::<f32>().unwrap());
        assert_eq!(a.entries()[0].name, "x.w");
    }

    #[test]
    fn counts_exclude_running_stats() {
        let s = ParamStore::new(DType::F32, &Device::Cpu, 0);
        let r = s.root();
        r.param("w", (3, 2), ParamRole::Weight, Init::Zeros).unwrap();
        r.buffer("rm", 2, ParamRole::RunningMean, Init::Zeros).unwrap();
        assert_eq!(s.learnable_count(), 6);
    }

    #[test]
    fn frozen_store_detaches_and_requires_source() {
        let src: HashMap<String, Tensor> =
            [("w".to_string(), Tensor::ones((2, 2), DType::F32, &Device::Cpu).unwrap())].into();
        let s = ParamStore::frozen(src, DType::F32, &Device::Cpu);
        let w = s.root().param("w", (2, 2), ParamRole::Weight, Init::Zeros).unwrap();
        assert!(!w.is_variable());
        assert_eq!(s.trainable_count(), 0);
        assert!(s.root().param("missing", 1, ParamRole::Bias, Init::Zeros).is_err());
    }

    #[test]
    fn source_shape_mismatch_is_reported() {
        let src: HashMap<String, Tensor> =
            [("w".to_string(), Tensor::ones((2, 3), DType::F32, &Device::Cpu).unwrap())].into();
        let s = ParamStore::with_source(src, DType::F32, &Device::Cpu, 0);
        let err = s.root().param("w", (2, 2), ParamRole::Weight, Init::Zeros).unwrap_err();
        assert!(err.to_string().contains("w"));
    }
}
