//! Pretrained backbones, fine-tuning, and truncation into frozen
//! feature-map generators.

pub(crate) mod blocks;
pub mod efficientnet;
mod finetune;
mod mobilenet_v2;
pub mod shufflenet;
mod squeezenet;

pub use finetune::{finetune, FinetuneSummary, FinetunedBackbone};
pub use shufflenet::ShuffleNetConfig;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Ctx, Layer, NetBuilder, OptimParam, ParamStore, SequentialNet};

pub const CLASSIFIER_PREFIX: &str = "classifier.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BackboneKind {
    #[serde(rename = "SqueezeNet")]
    SqueezeNet,
    #[serde(rename = "ShuffleNet")]
    ShuffleNet,
    #[serde(rename = "MobileNet-v2")]
    MobileNetV2,
    #[serde(rename = "EfficientNet-B0")]
    EfficientNetB0,
}

impl BackboneKind {
    /// Also the canonical concatenation order of branches.
    pub const ALL: [BackboneKind; 4] = [
        BackboneKind::SqueezeNet,
        BackboneKind::ShuffleNet,
        BackboneKind::MobileNetV2,
        BackboneKind::EfficientNetB0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::SqueezeNet => "SqueezeNet",
            BackboneKind::ShuffleNet => "ShuffleNet",
            BackboneKind::MobileNetV2 => "MobileNet-v2",
            BackboneKind::EfficientNetB0 => "EfficientNet-B0",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            BackboneKind::SqueezeNet => "squeezenet",
            BackboneKind::ShuffleNet => "shufflenet",
            BackboneKind::MobileNetV2 => "mobilenetv2",
            BackboneKind::EfficientNetB0 => "efficientnetb0",
        }
    }

    /// File expected in the weight directory.
    pub fn weight_file(self) -> &'static str {
        match self {
            BackboneKind::SqueezeNet => "squeezenet1_1.safetensors",
            BackboneKind::ShuffleNet => "shufflenet_v1.safetensors",
            BackboneKind::MobileNetV2 => "mobilenet_v2.safetensors",
            BackboneKind::EfficientNetB0 => "efficientnet_b0.safetensors",
        }
    }

    fn supported() -> String {
        Self::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.slug() == norm)
            .ok_or_else(|| Error::UnknownBackbone {
                name: s.to_string(),
                supported: Self::supported(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PostAnchorOp {
    /// Max pooling with ceil rounding, so 13×13 maps become 7×7.
    MaxPoolCeil { kernel: usize, stride: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSpec {
    /// What the truncation point is, independent of any framework's names.
    pub semantic: String,
    /// Stage name in this crate's graph.
    pub layer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub depth_layers: usize,
    /// Size of the full ImageNet network, in millions.
    pub reference_params_m: f64,
    pub input_size: (usize, usize, usize),
    pub anchor: AnchorSpec,
    pub post_anchor_ops: Vec<PostAnchorOp>,
    /// Generator output as (height, width, channels).
    pub output_shape: (usize, usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shufflenet: Option<ShuffleNetConfig>,
}

impl BackboneSpec {
    pub fn new(kind: BackboneKind) -> Self {
        let input_size = (224, 224, 3);
        match kind {
            BackboneKind::SqueezeNet => Self {
                kind,
                depth_layers: 18,
                reference_params_m: 1.24,
                input_size,
                anchor: AnchorSpec {
                    semantic: "final fire-module depth concatenation".into(),
                    layer: squeezenet::ANCHOR.into(),
                },
                post_anchor_ops: vec![PostAnchorOp::MaxPoolCeil { kernel: 2, stride: 2 }],
                output_shape: (7, 7, 512),
                shufflenet: None,
            },
            BackboneKind::ShuffleNet => Self::shufflenet(ShuffleNetConfig::default()),
            BackboneKind::MobileNetV2 => Self {
                kind,
                depth_layers: 53,
                reference_params_m: 3.5,
                input_size,
                anchor: AnchorSpec {
                    semantic: "last pre-pooling activation".into(),
                    layer: mobilenet_v2::ANCHOR.into(),
                },
                post_anchor_ops: vec![],
                output_shape: (7, 7, 1280),
                shufflenet: None,
            },
            BackboneKind::EfficientNetB0 => Self {
                kind,
                depth_layers: 82,
                reference_params_m: 5.3,
                input_size,
                anchor: AnchorSpec {
                    semantic: "final head multiply (pre-pooling swish) activation".into(),
                    layer: efficientnet::ANCHOR.into(),
                },
                post_anchor_ops: vec![],
                output_shape: (7, 7, 1280),
                shufflenet: None,
            },
        }
    }

    pub fn shufflenet(cfg: ShuffleNetConfig) -> Self {
        Self {
            kind: BackboneKind::ShuffleNet,
            depth_layers: 50,
            reference_params_m: 1.4,
            input_size: (224, 224, 3),
            anchor: AnchorSpec {
                semantic: "final element-wise addition block".into(),
                layer: cfg.anchor(),
            },
            post_anchor_ops: vec![],
            output_shape: (7, 7, cfg.out_channels()),
            shufflenet: Some(cfg),
        }
    }

    fn build_into(&self, b: &mut NetBuilder, store: &ParamStore, num_classes: usize) -> Result<()> {
        let root = store.root();
        match self.kind {
            BackboneKind::SqueezeNet => squeezenet::build(b, &root, num_classes),
            BackboneKind::ShuffleNet => {
                let cfg = self.shufflenet.clone().unwrap_or_default();
                shufflenet::build(b, &root, &cfg, num_classes)
            }
            BackboneKind::MobileNetV2 => mobilenet_v2::build(b, &root, num_classes),
            BackboneKind::EfficientNetB0 => efficientnet::build(b, &root, num_classes),
        }
    }

    /// Every stage name of the full network, in order.
    pub fn layer_names(&self) -> Result<Vec<String>> {
        let mut b = NetBuilder::dry();
        let store = ParamStore::new(DType::F32, &Device::Cpu, 0);
        self.build_into(&mut b, &store, 1)?;
        Ok(b.names().to_vec())
    }

    fn build_net(&self, store: &ParamStore, num_classes: usize, stop_after: Option<&str>) -> Result<SequentialNet> {
        let mut b = NetBuilder::new(stop_after);
        self.build_into(&mut b, store, num_classes)?;
        b.finish()
    }
}

/// Maps framework-specific layer names onto this crate's stage names, and
/// optionally overrides the truncation point per backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorMap {
    pub aliases: BTreeMap<String, String>,
    pub overrides: BTreeMap<BackboneKind, String>,
}

impl Default for AnchorMap {
    fn default() -> Self {
        let aliases = [
            ("fire9-concat", squeezenet::ANCHOR),
            ("node_198", "stage4/unit4/add"),
            ("efficientnet-b0|model|head|MulLayer", efficientnet::ANCHOR),
            ("efficientnet-b0|model|head|conv2d|Conv2D", efficientnet::LAST_CONV),
            ("out_relu", mobilenet_v2::ANCHOR),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        Self {
            aliases,
            overrides: BTreeMap::new(),
        }
    }
}

impl AnchorMap {
    pub fn resolve(&self, spec: &BackboneSpec) -> String {
        let raw = self
            .overrides
            .get(&spec.kind)
            .cloned()
            .unwrap_or_else(|| spec.anchor.layer.clone());
        self.aliases.get(&raw).cloned().unwrap_or(raw)
    }
}

/// Where ImageNet weights come from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightSource {
    pub dir: Option<PathBuf>,
    /// Fall back to seeded random initialization when no file is present.
    pub allow_random_init: bool,
    pub seed: u64,
}

/// A complete classification network.
#[derive(Debug)]
pub struct Backbone {
    pub spec: BackboneSpec,
    pub store: ParamStore,
    net: SequentialNet,
    pub num_classes: usize,
}

impl Backbone {
    pub fn build(spec: BackboneSpec, store: ParamStore, num_classes: usize) -> Result<Self> {
        let net = spec.build_net(&store, num_classes, None)?;
        Ok(Self {
            spec,
            store,
            net,
            num_classes,
        })
    }

    /// Seeded random initialization.
    pub fn random(spec: BackboneSpec, num_classes: usize, seed: u64) -> Result<Self> {
        Self::build(spec, ParamStore::new(DType::F32, &Device::Cpu, seed), num_classes)
    }

    pub fn net(&self) -> &SequentialNet {
        &self.net
    }

    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        self.net.forward(x, ctx)
    }

    pub fn param_count(&self) -> usize {
        self.store.learnable_count()
    }

    /// Swap the classifier for a freshly initialized `num_classes`-way one,
    /// keeping every other weight.
    pub fn with_classes(&self, num_classes: usize, seed: u64) -> Result<Backbone> {
        let kept = self.store.tensors_where(|n| !n.starts_with(CLASSIFIER_PREFIX))?;
        let store = ParamStore::with_source(kept, self.store.dtype(), self.store.device(), seed);
        Backbone::build(self.spec.clone(), store, num_classes)
    }

    /// Every learnable parameter; the classifier gets `new_layer_lr_factor`.
    pub fn optim_params(&self, new_layer_lr_factor: f64) -> Vec<OptimParam> {
        self.store
            .entries()
            .into_iter()
            .filter(|e| e.role.is_learnable())
            .map(|e| OptimParam {
                lr_factor: if e.name.starts_with(CLASSIFIER_PREFIX) {
                    new_layer_lr_factor
                } else {
                    1.0
                },
                l2_factor: e.role.default_l2_factor(),
                var: e.var,
            })
            .collect()
    }
}

/// ImageNet-pretrained backbone by name.
pub fn load_pretrained(name: &str, source: &WeightSource) -> Result<Backbone> {
    let kind: BackboneKind = name.parse()?;
    load_pretrained_spec(BackboneSpec::new(kind), source)
}

pub fn load_pretrained_spec(spec: BackboneSpec, source: &WeightSource) -> Result<Backbone> {
    let path = source
        .dir
        .as_ref()
        .map(|d| d.join(spec.kind.weight_file()))
        .unwrap_or_else(|| PathBuf::from(spec.kind.weight_file()));
    if path.is_file() {
        let tensors = crate::nn::params::load_safetensors(&path, &Device::Cpu)?;
        let store = ParamStore::with_source(tensors, DType::F32, &Device::Cpu, source.seed);
        let backbone = Backbone::build(spec, store, 1000)?;
        let missing: Vec<String> = backbone
            .store
            .entries()
            .into_iter()
            .filter(|e| e.fresh)
            .map(|e| e.name)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Checkpoint(format!(
                "{} lacks {} parameters, e.g. {}",
                path.display(),
                missing.len(),
                missing.iter().take(5).cloned().collect::<Vec<_>>().join(", ")
            )));
        }
        return Ok(backbone);
    }
    if source.allow_random_init {
        log::warn!(
            "no weights at {}; using random initialization for {}",
            path.display(),
            spec.kind
        );
        return Backbone::random(spec, 1000, source.seed);
    }
    Err(Error::MissingWeights {
        backbone: spec.kind.name().to_string(),
        path,
        hint: match spec.kind {
            BackboneKind::ShuffleNet => "Convert an ImageNet ShuffleNet v1 checkpoint to safetensors using the \
                parameter names printed by `lungfuse layers shufflenet`, or enable random initialization."
                .into(),
            _ => "Run `python scripts/export_torchvision_weights.py <weights dir>` to export the torchvision \
                ImageNet weights, or enable random initialization."
                .into(),
        },
    })
}

/// A truncated, frozen backbone producing a spatial grid of activations.
#[derive(Debug)]
pub struct FeatureMapGenerator {
    pub spec: BackboneSpec,
    store: ParamStore,
    net: SequentialNet,
}

#[derive(Debug)]
struct PostOpLayer(PostAnchorOp);

impl Layer for PostOpLayer {
    fn forward(&self, x: &Tensor, _ctx: &Ctx) -> Result<Tensor> {
        match self.0 {
            PostAnchorOp::MaxPoolCeil { kernel, stride } => crate::nn::layers::max_pool2d(x, kernel, stride, 0, true),
        }
    }
}

impl FeatureMapGenerator {
    /// Rebuild from frozen weights, e.g. when loading a checkpoint.
    pub fn from_tensors(spec: BackboneSpec, tensors: HashMap<String, Tensor>, dtype: DType) -> Result<Self> {
        let store = ParamStore::frozen(tensors, dtype, &Device::Cpu);
        let mut net = spec.build_net(&store, 1, Some(&spec.anchor.layer))?;
        for (i, op) in spec.post_anchor_ops.iter().enumerate() {
            net.push(format!("post{i}"), Box::new(PostOpLayer(*op)));
        }
        Ok(Self { spec, store, net })
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        self.spec.output_shape
    }

    pub fn channels(&self) -> usize {
        self.spec.output_shape.2
    }

    /// `N×3×224×224 → N×c×7×7`, always with stored batch-norm statistics.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.net.forward(x, &Ctx::eval())
    }

    pub fn param_count(&self) -> usize {
        self.store.learnable_count()
    }

    pub fn trainable_count(&self) -> usize {
        self.store.trainable_count()
    }

    pub fn tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        self.store.tensors()
    }

    /// Content hash of all weights and statistics.
    pub fn weights_digest(&self) -> Result<String> {
        let mut bytes = Vec::new();
        for (name, t) in self.store.tensors()? {
            bytes.extend(name.as_bytes());
            for v in t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()? {
                bytes.extend(v.to_le_bytes());
            }
        }
        Ok(crate::seed::digest_hex(&bytes))
    }
}

/// Cut the fine-tuned network at its anchor, append the post-anchor ops,
/// and freeze every weight.
pub fn truncate_and_freeze(ft: &FinetunedBackbone, anchors: &AnchorMap) -> Result<FeatureMapGenerator> {
    let mut spec = ft.backbone.spec.clone();
    let layer = anchors.resolve(&spec);
    let names = spec.layer_names()?;
    if !names.contains(&layer) {
        return Err(Error::AnchorNotFound {
            backbone: spec.kind.name().to_string(),
            anchor: layer,
            candidates: names.join(", "),
        });
    }
    let default_anchor = layer == spec.anchor.layer;
    spec.anchor.layer = layer;
    let kept = ft.backbone.store.tensors_where(|n| !n.starts_with(CLASSIFIER_PREFIX))?;
    let dtype = ft.backbone.store.dtype();
    let mut generator = FeatureMapGenerator::from_tensors(spec, kept, dtype)?;

    let probe = Tensor::zeros((1, 3, 224, 224), dtype, &Device::Cpu)?;
    let (_, c, h, w) = generator.forward(&probe)?.dims4()?;
    if default_anchor && (h, w, c) != generator.spec.output_shape {
        return Err(Error::Shape(format!(
            "{} generator yields {h}x{w}x{c}, declared {:?}",
            generator.spec.kind, generator.spec.output_shape
        )));
    }
    generator.spec.output_shape = (h, w, c);
    Ok(generator)
}
