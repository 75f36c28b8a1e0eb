//! The fused multi-branch classifier: frozen feature-map generators,
//! channel concatenation, and a small trainable head.

mod loss;

pub use loss::{loss_scalar, weighted_cross_entropy, weighted_cross_entropy_logits, weighted_cross_entropy_logit_grad};

use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::backbone::blocks::{boxed, BnOnly, ConvOnly, Dense};
use crate::backbone::{BackboneKind, FeatureMapGenerator};
use crate::class::{ClassLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::layers::{Activation, BatchNorm2d, Conv2d, ConvSpec, Linear};
use crate::nn::{Act, Ctx, Layer, NetBuilder, OptimParam, ParamStore, SequentialNet};

/// Loss weights in class order, favoring the minority COVID-19 class.
pub const DEFAULT_CLASS_WEIGHTS: [f64; NUM_CLASSES] = [0.75, 0.1, 0.15];

/// The second head ReLU, whose 7×7×3 output is the Grad-CAM target layer.
pub const DEFAULT_CAM_LAYER: &str = "relu_2";

pub const HEAD_PREFIX: &str = "head";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    /// Spatial kernel of the 3-filter convolution; odd, "same" padding.
    pub kernel_size: usize,
    pub class_weights: [f64; NUM_CLASSES],
    pub bn_eps: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            kernel_size: 1,
            class_weights: DEFAULT_CLASS_WEIGHTS,
            bn_eps: 1e-5,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "head kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "class weights must be positive, got {:?}",
                self.class_weights
            )));
        }
        Ok(())
    }

    /// Closed-form trainable parameter count for `channels` input maps of
    /// size `h×w`: two batch norms, the conv, and the dense layer.
    pub fn trainable_count(&self, channels: usize, h: usize, w: usize) -> usize {
        let k = NUM_CLASSES;
        let bn1 = 2 * channels;
        let conv = channels * self.kernel_size * self.kernel_size * k + k;
        let bn2 = 2 * k;
        let fc = h * w * k * k + k;
        bn1 + conv + bn2 + fc
    }
}

#[derive(Debug)]
struct Flatten;

impl Layer for Flatten {
    fn forward(&self, x: &Tensor, _ctx: &Ctx) -> Result<Tensor> {
        Ok(x.flatten_from(1)?)
    }
}

/// The fusion head, with parameters under `head.` in `store`.
pub fn build_head(store: &ParamStore, cfg: &HeadConfig, channels: usize, h: usize, w: usize) -> Result<SequentialNet> {
    let s = store.root().pp(HEAD_PREFIX);
    let mut b = NetBuilder::new(None);
    b.push("bn_1", || boxed(BnOnly(BatchNorm2d::new(&s.pp("bn_1"), channels, cfg.bn_eps)?)))?;
    b.push("relu_1", || boxed(Act(Activation::Relu)))?;
    b.push("conv", || {
        let spec = ConvSpec::new(channels, NUM_CLASSES, cfg.kernel_size).same().bias(true);
        boxed(ConvOnly(Conv2d::new(&s.pp("conv"), spec)?))
    })?;
    b.push("bn_2", || boxed(BnOnly(BatchNorm2d::new(&s.pp("bn_2"), NUM_CLASSES, cfg.bn_eps)?)))?;
    b.push("relu_2", || boxed(Act(Activation::Relu)))?;
    b.push("flatten", || boxed(Flatten))?;
    b.push("fc", || boxed(Dense(Linear::new(&s.pp("fc"), h * w * NUM_CLASSES, NUM_CLASSES)?)))?;
    b.finish()
}

/// One classified sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logits: [f64; NUM_CLASSES],
    pub probs: [f64; NUM_CLASSES],
    pub label: ClassLabel,
}

impl Prediction {
    pub fn from_logits(logits: [f64; NUM_CLASSES]) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        let probs = [exp[0] / sum, exp[1] / sum, exp[2] / sum];
        Self {
            logits,
            probs,
            label: ClassLabel::from_index(argmax(&probs)).expect("three classes"),
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Row-wise predictions from an `N×3` logit tensor.
pub fn predictions_from_logits(logits: &Tensor) -> Result<Vec<Prediction>> {
    let rows = logits.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    rows.into_iter()
        .map(|r| {
            if r.len() != NUM_CLASSES {
                return Err(Error::Shape(format!("expected {NUM_CLASSES} logits, got {}", r.len())));
            }
            Ok(Prediction::from_logits([r[0], r[1], r[2]]))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
}

/// A network that maps images to class logits and exposes named
/// intermediate layers, for evaluation and Grad-CAM.
pub trait Classifier {
    fn logits(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor>;

    fn layer_names(&self) -> Vec<String>;

    /// Activation at `layer` (inclusive).
    fn forward_until(&self, x: &Tensor, layer: &str) -> Result<Tensor>;

    /// Logits from an activation captured at `layer`.
    fn forward_from(&self, activation: &Tensor, layer: &str) -> Result<Tensor>;

    fn default_cam_layer(&self) -> String;

    fn predict(&self, x: &Tensor) -> Result<Vec<Prediction>> {
        predictions_from_logits(&self.logits(x, &Ctx::eval())?)
    }
}

#[derive(Debug)]
pub struct EnsembleModel {
    branches: Vec<FeatureMapGenerator>,
    pub head_config: HeadConfig,
    store: ParamStore,
    head: SequentialNet,
    spatial: (usize, usize),
    channels: usize,
}

fn canonical_rank(kind: BackboneKind) -> usize {
    BackboneKind::ALL.iter().position(|k| *k == kind).expect("listed")
}

/// Assemble the fused model. Branches are reordered into the canonical
/// concatenation order (SqueezeNet, ShuffleNet/MobileNet-v2, EfficientNet-B0).
pub fn build_ensemble(branches: Vec<FeatureMapGenerator>, head: HeadConfig, seed: u64) -> Result<EnsembleModel> {
    EnsembleModel::assemble(branches, head, ParamStore::new(DType::F32, &Device::Cpu, seed))
}

impl EnsembleModel {
    fn assemble(mut branches: Vec<FeatureMapGenerator>, cfg: HeadConfig, store: ParamStore) -> Result<Self> {
        cfg.validate()?;
        if branches.is_empty() || branches.len() > 3 {
            return Err(Error::InvalidArgument(format!(
                "an ensemble takes 1 to 3 branches, got {}",
                branches.len()
            )));
        }
        branches.sort_by_key(|b| canonical_rank(b.spec.kind));
        for pair in branches.windows(2) {
            if pair[0].spec.kind == pair[1].spec.kind {
                return Err(Error::InvalidArgument(format!("duplicate branch {}", pair[0].spec.kind)));
            }
        }
        let (h, w, _) = branches[0].output_shape();
        for b in &branches[1..] {
            let (bh, bw, _) = b.output_shape();
            if (bh, bw) != (h, w) {
                return Err(Error::SpatialMismatch {
                    branch: b.spec.kind.name().to_string(),
                    found: (bh, bw),
                    expected: (h, w),
                });
            }
        }
        let channels = branches.iter().map(|b| b.channels()).sum();
        let head = build_head(&store, &cfg, channels, h, w)?;
        Ok(Self {
            branches,
            head_config: cfg,
            store,
            head,
            spatial: (h, w),
            channels,
        })
    }

    /// Rebuild with saved head weights, e.g. from a checkpoint.
    pub fn from_parts(
        branches: Vec<FeatureMapGenerator>,
        cfg: HeadConfig,
        head_tensors: HashMap<String, Tensor>,
    ) -> Result<Self> {
        let store = ParamStore::with_source(head_tensors, DType::F32, &Device::Cpu, 0);
        let model = Self::assemble(branches, cfg, store)?;
        if let Some(e) = model.store.entries().into_iter().find(|e| e.fresh) {
            return Err(Error::Checkpoint(format!("head weights lack {}", e.name)));
        }
        Ok(model)
    }

    pub fn branches(&self) -> &[FeatureMapGenerator] {
        &self.branches
    }

    pub fn branch_kinds(&self) -> Vec<BackboneKind> {
        self.branches.iter().map(|b| b.spec.kind).collect()
    }

    pub fn head_store(&self) -> &ParamStore {
        &self.store
    }

    /// Concatenated feature shape as (height, width, channels).
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        (self.spatial.0, self.spatial.1, self.channels)
    }

    pub fn class_order(&self) -> [ClassLabel; NUM_CLASSES] {
        ClassLabel::ALL
    }

    /// Depth concatenation of every branch output for the same input.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if (c, h, w) != (3, 224, 224) {
            return Err(Error::Shape(format!("expected N×3×224×224 input, got {:?}", x.dims())));
        }
        let maps = self
            .branches
            .iter()
            .map(|b| b.forward(x))
            .collect::<Result<Vec<_>>>()?;
        if maps.len() == 1 {
            return Ok(maps.into_iter().next().expect("one map"));
        }
        Ok(Tensor::cat(&maps, 1)?)
    }

    /// Logits from precomputed concatenated features.
    pub fn head_logits(&self, features: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        self.head.forward(features, ctx)
    }

    pub fn head_layer_names(&self) -> Vec<String> {
        self.head.stage_names().into_iter().map(String::from).collect()
    }

    pub fn head_forward_until(&self, features: &Tensor, layer: &str) -> Result<Tensor> {
        self.head.forward_until(features, layer, &Ctx::eval())
    }

    pub fn head_forward_from(&self, activation: &Tensor, layer: &str) -> Result<Tensor> {
        self.head.forward_from(activation, layer, &Ctx::eval())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Vec<Prediction>> {
        self.predict(x)
    }

    pub fn count_parameters(&self) -> ParamCount {
        let branch_total: usize = self.branches.iter().map(|b| b.param_count()).sum();
        ParamCount {
            total: branch_total + self.store.learnable_count(),
            trainable: self.store.trainable_count() + self.branches.iter().map(|b| b.trainable_count()).sum::<usize>(),
        }
    }

    /// Optimizer view of the head; the global rate applies unscaled.
    pub fn optim_params(&self) -> Vec<OptimParam> {
        self.store
            .entries()
            .into_iter()
            .filter(|e| e.role.is_learnable())
            .map(|e| OptimParam {
                lr_factor: 1.0,
                l2_factor: e.role.default_l2_factor(),
                var: e.var,
            })
            .collect()
    }

    pub fn head_tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        self.store.tensors()
    }
}

impl Classifier for EnsembleModel {
    fn logits(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        self.head_logits(&self.features(x)?, ctx)
    }

    fn layer_names(&self) -> Vec<String> {
        self.head_layer_names()
    }

    fn forward_until(&self, x: &Tensor, layer: &str) -> Result<Tensor> {
        self.head_forward_until(&self.features(x)?, layer)
    }

    fn forward_from(&self, activation: &Tensor, layer: &str) -> Result<Tensor> {
        self.head_forward_from(activation, layer)
    }

    fn default_cam_layer(&self) -> String {
        DEFAULT_CAM_LAYER.to_string()
    }
}

impl Classifier for crate::backbone::Backbone {
    fn logits(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        self.forward(x, ctx)
    }

    fn layer_names(&self) -> Vec<String> {
        self.net().stage_names().into_iter().map(String::from).collect()
    }

    fn forward_until(&self, x: &Tensor, layer: &str) -> Result<Tensor> {
        self.net().forward_until(x, layer, &Ctx::eval())
    }

    fn forward_from(&self, activation: &Tensor, layer: &str) -> Result<Tensor> {
        self.net().forward_from(activation, layer, &Ctx::eval())
    }

    fn default_cam_layer(&self) -> String {
        match self.spec.kind {
            BackboneKind::EfficientNetB0 => crate::backbone::efficientnet::LAST_CONV.to_string(),
            _ => self.spec.anchor.layer.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_head_count() {
        let cfg = HeadConfig::default();
        assert_eq!(cfg.trainable_count(2336, 7, 7), 4672 + 7011 + 6 + 444);
        let k3 = HeadConfig {
            kernel_size: 3,
            ..HeadConfig::default()
        };
        assert_eq!(k3.trainable_count(10, 7, 7), 20 + 10 * 9 * 3 + 3 + 6 + 444);
    }

    #[test]
    fn built_head_matches_closed_form() {
        for k in [1, 3] {
            let cfg = HeadConfig {
                kernel_size: k,
                ..HeadConfig::default()
            };
            let store = ParamStore::new(DType::F32, &Device::Cpu, 1);
            let head = build_head(&store, &cfg, 16, 7, 7).unwrap();
            assert_eq!(store.learnable_count(), cfg.trainable_count(16, 7, 7));
            let x = Tensor::randn(0f32, 1.0, (2, 16, 7, 7), &Device::Cpu).unwrap();
            assert_eq!(head.forward(&x, &Ctx::eval()).unwrap().dims(), &[2, 3]);
        }
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0, 1.0, 1.0]), 0);
        let p = Prediction::from_logits([0.0, 0.0, 0.0]);
        assert_eq!(p.label, ClassLabel::Covid19);
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_even_kernel_and_bad_weights() {
        let mut cfg = HeadConfig {
            kernel_size: 2,
            ..HeadConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.kernel_size = 1;
        cfg.class_weights = [0.75, 0.0, 0.15];
        assert!(cfg.validate().is_err());
    }
}
