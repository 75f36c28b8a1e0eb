//! Model checkpoints: one safetensors blob plus a JSON manifest.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::backbone::{AnchorMap, Backbone, BackboneKind, BackboneSpec, FeatureMapGenerator};
use crate::class::{ClassLabel, NUM_CLASSES};
use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::fusion::{Classifier, EnsembleModel, HeadConfig, ParamCount};
use crate::nn::ParamStore;
use crate::train::Hyperparams;

pub const WEIGHTS_FILE: &str = "model.safetensors";
pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ensemble,
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchManifest {
    pub spec: BackboneSpec,
    pub param_count: usize,
    pub weights_digest: String,
}

/// Everything needed to rebuild and interpret a saved model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: ModelKind,
    pub branches: Vec<BranchManifest>,
    pub concat_order: Vec<BackboneKind>,
    pub head: Option<HeadConfig>,
    pub class_order: Vec<ClassLabel>,
    pub class_weights: [f64; NUM_CLASSES],
    pub normalization: Normalization,
    pub anchors: AnchorMap,
    /// Concatenated feature shape (h, w, c) for ensembles.
    pub output_shape: Option<(usize, usize, usize)>,
    pub hyperparams: BTreeMap<String, Hyperparams>,
    pub fold_plan_digest: Option<String>,
    pub fold_id: Option<usize>,
    pub param_count: ParamCount,
}

/// Run metadata recorded alongside the weights.
#[derive(Debug, Clone, Default)]
pub struct ManifestContext {
    pub normalization: Normalization,
    pub anchors: AnchorMap,
    pub hyperparams: BTreeMap<String, Hyperparams>,
    pub fold_plan_digest: Option<String>,
    pub fold_id: Option<usize>,
}

fn branch_prefix(kind: BackboneKind) -> String {
    format!("branch.{}.", kind.slug())
}

const SINGLE_PREFIX: &str = "backbone.";

fn write(dir: &Path, tensors: HashMap<String, Tensor>, manifest: &Manifest) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let tensors: HashMap<String, Tensor> = tensors
        .into_iter()
        .map(|(k, v)| Ok((k, v.to_dtype(DType::F32)?)))
        .collect::<Result<_>>()?;
    candle_core::safetensors::save(&tensors, dir.join(WEIGHTS_FILE))?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(manifest)?)?;
    Ok(dir.to_path_buf())
}

pub fn save_ensemble(model: &EnsembleModel, ctx: &ManifestContext, dir: &Path) -> Result<PathBuf> {
    let mut tensors = HashMap::new();
    let mut branches = Vec::new();
    for b in model.branches() {
        let prefix = branch_prefix(b.spec.kind);
        for (k, v) in b.tensors()? {
            tensors.insert(format!("{prefix}{k}"), v);
        }
        branches.push(BranchManifest {
            spec: b.spec.clone(),
            param_count: b.param_count(),
            weights_digest: b.weights_digest()?,
        });
    }
    tensors.extend(model.head_tensors()?);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: ModelKind::Ensemble,
        branches,
        concat_order: model.branch_kinds(),
        head: Some(model.head_config.clone()),
        class_order: ClassLabel::ALL.to_vec(),
        class_weights: model.head_config.class_weights,
        normalization: ctx.normalization.clone(),
        anchors: ctx.anchors.clone(),
        output_shape: Some(model.feature_shape()),
        hyperparams: ctx.hyperparams.clone(),
        fold_plan_digest: ctx.fold_plan_digest.clone(),
        fold_id: ctx.fold_id,
        param_count: model.count_parameters(),
    };
    write(dir, tensors, &manifest)
}

pub fn save_single(backbone: &Backbone, ctx: &ManifestContext, dir: &Path) -> Result<PathBuf> {
    let tensors = backbone
        .store
        .tensors()?
        .into_iter()
        .map(|(k, v)| (format!("{SINGLE_PREFIX}{k}"), v))
        .collect();
    let weights = ctx
        .hyperparams
        .get("finetune")
        .map(|h| h.class_weights)
        .unwrap_or(crate::fusion::DEFAULT_CLASS_WEIGHTS);
    let count = backbone.param_count();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: ModelKind::Single,
        branches: vec![BranchManifest {
            spec: backbone.spec.clone(),
            param_count: count,
            weights_digest: String::new(),
        }],
        concat_order: vec![backbone.spec.kind],
        head: None,
        class_order: ClassLabel::ALL.to_vec(),
        class_weights: weights,
        normalization: ctx.normalization.clone(),
        anchors: ctx.anchors.clone(),
        output_shape: None,
        hyperparams: ctx.hyperparams.clone(),
        fold_plan_digest: ctx.fold_plan_digest.clone(),
        fold_id: ctx.fold_id,
        param_count: ParamCount {
            total: count,
            trainable: count,
        },
    };
    write(dir, tensors, &manifest)
}

/// A model restored from disk.
#[derive(Debug)]
pub enum LoadedModel {
    Ensemble(EnsembleModel),
    Single(Backbone),
}

impl LoadedModel {
    pub fn classifier(&self) -> &dyn Classifier {
        match self {
            LoadedModel::Ensemble(m) => m,
            LoadedModel::Single(b) => b,
        }
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported manifest version {} (expected {FORMAT_VERSION})",
            m.format_version
        )));
    }
    if m.class_order != ClassLabel::ALL {
        return Err(Error::Checkpoint(format!("unexpected class order {:?}", m.class_order)));
    }
    Ok(m)
}

fn strip(tensors: &HashMap<String, Tensor>, prefix: &str) -> HashMap<String, Tensor> {
    tensors
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
        .collect()
}

pub fn load_model(dir: &Path) -> Result<(LoadedModel, Manifest)> {
    let manifest = read_manifest(dir)?;
    let tensors = crate::nn::params::load_safetensors(&dir.join(WEIGHTS_FILE), &Device::Cpu)?;
    let model = match manifest.kind {
        ModelKind::Ensemble => {
            let branches = manifest
                .branches
                .iter()
                .map(|b| {
                    let g = FeatureMapGenerator::from_tensors(
                        b.spec.clone(),
                        strip(&tensors, &branch_prefix(b.spec.kind)),
                        DType::F32,
                    )?;
                    if !b.weights_digest.is_empty() && g.weights_digest()? != b.weights_digest {
                        return Err(Error::Checkpoint(format!("{} branch weights do not match the manifest", b.spec.kind)));
                    }
                    Ok(g)
                })
                .collect::<Result<Vec<_>>>()?;
            let head = manifest
                .head
                .clone()
                .ok_or_else(|| Error::Checkpoint("ensemble manifest lacks a head config".into()))?;
            let head_tensors = tensors
                .iter()
                .filter(|(k, _)| k.starts_with("head."))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            LoadedModel::Ensemble(EnsembleModel::from_parts(branches, head, head_tensors)?)
        }
        ModelKind::Single => {
            let spec = manifest
                .branches
                .first()
                .ok_or_else(|| Error::Checkpoint("single-model manifest lists no backbone".into()))?
                .spec
                .clone();
            let store = ParamStore::with_source(strip(&tensors, SINGLE_PREFIX), DType::F32, &Device::Cpu, 0);
            let b = Backbone::build(spec, store, NUM_CLASSES)?;
            if let Some(e) = b.store.entries().into_iter().find(|e| e.fresh) {
                return Err(Error::Checkpoint(format!("checkpoint lacks {}", e.name)));
            }
            LoadedModel::Single(b)
        }
    };
    Ok((model, manifest))
}
