//! Run configuration: a TOML file plus `LUNGFUSE_*` environment overrides.
//!
//! An override names a key path with `__` between levels, e.g.
//! `LUNGFUSE_FOLDS__K=10` or `LUNGFUSE_HYPERPARAMS__ENSEMBLE__GLOBAL_LR=5e-4`.
//! Values are read as TOML scalars and fall back to plain strings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{AnchorMap, ShuffleNetConfig, WeightSource};
use crate::bench::BenchConfig;
use crate::data::{ClassDirAliases, Normalization};
use crate::error::{Error, Result};
use crate::fusion::HeadConfig;
use crate::gradcam::{CamScore, Colormap};
use crate::train::{CvConfig, Hyperparams, Variant};

pub const ENV_PREFIX: &str = "LUNGFUSE_";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub root: Option<PathBuf>,
    pub aliases: ClassDirAliases,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoldsConfig {
    pub k: usize,
    pub seed: u64,
}

impl Default for FoldsConfig {
    fn default() -> Self {
        Self { k: 5, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperparamsConfig {
    pub finetune: Hyperparams,
    pub ensemble: Hyperparams,
}

impl Default for HyperparamsConfig {
    fn default() -> Self {
        Self {
            finetune: Hyperparams::single_model(),
            ensemble: Hyperparams::ensemble(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub run_id: Option<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            run_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCamConfig {
    pub alpha: f64,
    pub colormap: Colormap,
    pub score: CamScore,
    pub layer: Option<String>,
}

impl Default for GradCamConfig {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            colormap: Colormap::Jet,
            score: CamScore::Logit,
            layer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub folds: FoldsConfig,
    pub variant: Variant,
    pub finetune_per_fold: bool,
    pub hyperparams: HyperparamsConfig,
    pub head: HeadConfig,
    pub weights: WeightSource,
    pub anchors: AnchorMap,
    pub shufflenet: ShuffleNetConfig,
    pub normalization: Normalization,
    pub output: OutputConfig,
    pub bench: BenchConfig,
    pub gradcam: GradCamConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            folds: FoldsConfig::default(),
            variant: Variant::Cvdnet3,
            finetune_per_fold: true,
            hyperparams: HyperparamsConfig::default(),
            head: HeadConfig::default(),
            weights: WeightSource::default(),
            anchors: AnchorMap::default(),
            shufflenet: ShuffleNetConfig::default(),
            normalization: Normalization::imagenet(),
            output: OutputConfig::default(),
            bench: BenchConfig::default(),
            gradcam: GradCamConfig::default(),
        }
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for key in parents {
        let entry = cur
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if !entry.is_table() {
            *entry = toml::Value::Table(toml::Table::new());
        }
        cur = entry.as_table_mut().expect("just made a table");
    }
    cur.insert(last.clone(), value);
}

impl RunConfig {
    /// Parse TOML text, apply overrides, and validate.
    pub fn from_toml_str<I>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(vec![format!("syntax: {}", e.message())]))?;
        for (key, value) in env {
            let Some(rest) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let path: Vec<String> = rest.split("__").map(|p| p.to_ascii_lowercase()).collect();
            if path.iter().any(|p| p.is_empty()) {
                return Err(Error::Config(vec![format!("{key}: malformed override name")]));
            }
            set_path(&mut table, &path, parse_scalar(&value));
        }
        let mut unknown = Vec::new();
        let cfg: RunConfig = serde_ignored::deserialize(toml::Value::Table(table), |p| {
            unknown.push(format!("{p}: unknown key"))
        })
        .map_err(|e: toml::de::Error| Error::Config(vec![e.message().trim().to_string()]))?;
        let mut problems = unknown;
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Read `path` (defaults when `None`) and apply overrides from the
    /// process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(vec![format!("{}: {e}", p.display())]))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, std::env::vars())
    }

    /// Every invalid setting, one message per key.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.folds.k < 2 {
            out.push(format!("folds.k: must be at least 2, got {}", self.folds.k));
        }
        out.extend(self.hyperparams.finetune.problems("hyperparams.finetune."));
        out.extend(self.hyperparams.ensemble.problems("hyperparams.ensemble."));
        if self.head.kernel_size % 2 == 0 {
            out.push(format!("head.kernel_size: must be odd, got {}", self.head.kernel_size));
        }
        if self.head.class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            out.push(format!("head.class_weights: entries must be positive, got {:?}", self.head.class_weights));
        }
        if self.normalization.std.iter().any(|s| !(*s > 0.0)) {
            out.push("normalization.std: entries must be positive".into());
        }
        if self.bench.repeats == 0 {
            out.push("bench.repeats: must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gradcam.alpha) {
            out.push(format!("gradcam.alpha: must lie in [0, 1], got {}", self.gradcam.alpha));
        }
        out
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig {
            variant: self.variant,
            seed: self.folds.seed,
            finetune: self.hyperparams.finetune.clone(),
            ensemble: self.hyperparams.ensemble.clone(),
            head: self.head.clone(),
            finetune_per_fold: self.finetune_per_fold,
            weights: self.weights.clone(),
            anchors: self.anchors.clone(),
            shufflenet: self.shufflenet.clone(),
            normalization: self.normalization.clone(),
            only_folds: None,
        }
    }

    /// `<output.dir>/<run-id>`; the run id defaults to the variant and seed.
    pub fn run_dir(&self) -> PathBuf {
        let id = self
            .output
            .run_id
            .clone()
            .unwrap_or_else(|| format!("{}-seed{}", self.variant.slug(), self.folds.seed));
        self.output.dir.join(id)
    }
}

/// Subdirectories of a run directory.
pub const RUN_SUBDIRS: [&str; 5] = ["folds", "checkpoints", "reports", "heatmaps", "bench"];
