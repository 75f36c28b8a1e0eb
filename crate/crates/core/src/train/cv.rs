use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{evaluate_fold, train_ensemble, Hyperparams};
use crate::backbone::{
    finetune, Backbone, load_pretrained_spec, truncate_and_freeze, AnchorMap, BackboneKind, BackboneSpec, FinetunedBackbone,
    ShuffleNetConfig, WeightSource,
};
use crate::checkpoint::{save_ensemble, save_single, ManifestContext};
use crate::data::{split_train_val, FoldPlan, Normalization, SampleSource};
use crate::error::{Error, Result};
use crate::fusion::{build_ensemble, HeadConfig};
use crate::nn::ParamStore;
use crate::metrics::{macro_average, sum_confusions, ConfusionMatrix3, MetricsReport};
use crate::seed::{derive_seed, digest_hex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// SqueezeNet + EfficientNet-B0.
    Cvdnet1,
    /// SqueezeNet + MobileNet-v2 + EfficientNet-B0.
    Cvdnet2,
    /// SqueezeNet + ShuffleNet + EfficientNet-B0.
    Cvdnet3,
    Squeezenet,
    Shufflenet,
    Mobilenetv2,
    Efficientnetb0,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Cvdnet1,
        Variant::Cvdnet2,
        Variant::Cvdnet3,
        Variant::Squeezenet,
        Variant::Shufflenet,
        Variant::Mobilenetv2,
        Variant::Efficientnetb0,
    ];

    pub fn backbones(self) -> Vec<BackboneKind> {
        use BackboneKind::*;
        match self {
            Variant::Cvdnet1 => vec![SqueezeNet, EfficientNetB0],
            Variant::Cvdnet2 => vec![SqueezeNet, MobileNetV2, EfficientNetB0],
            Variant::Cvdnet3 => vec![SqueezeNet, ShuffleNet, EfficientNetB0],
            Variant::Squeezenet => vec![SqueezeNet],
            Variant::Shufflenet => vec![ShuffleNet],
            Variant::Mobilenetv2 => vec![MobileNetV2],
            Variant::Efficientnetb0 => vec![EfficientNetB0],
        }
    }

    pub fn is_ensemble(self) -> bool {
        matches!(self, Variant::Cvdnet1 | Variant::Cvdnet2 | Variant::Cvdnet3)
    }

    pub fn slug(self) -> &'static str {
        match self {
            Variant::Cvdnet1 => "cvdnet1",
            Variant::Cvdnet2 => "cvdnet2",
            Variant::Cvdnet3 => "cvdnet3",
            Variant::Squeezenet => "squeezenet",
            Variant::Shufflenet => "shufflenet",
            Variant::Mobilenetv2 => "mobilenetv2",
            Variant::Efficientnetb0 => "efficientnetb0",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['-', '_', ' ', '#'], "");
        Self::ALL.into_iter().find(|v| v.slug() == norm).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown variant {s:?}; expected one of {}",
                Self::ALL.map(|v| v.slug()).join(", ")
            ))
        })
    }
}

/// Everything the cross-validation driver needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub variant: Variant,
    pub seed: u64,
    pub finetune: Hyperparams,
    pub ensemble: Hyperparams,
    pub head: HeadConfig,
    /// Fine-tune backbones inside every fold; otherwise the fine-tunes of
    /// the first fold are reused by the others.
    pub finetune_per_fold: bool,
    pub weights: WeightSource,
    pub anchors: AnchorMap,
    pub shufflenet: ShuffleNetConfig,
    pub normalization: Normalization,
    /// 1-based folds to run; all when `None`.
    pub only_folds: Option<Vec<usize>>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Cvdnet3,
            seed: 0,
            finetune: Hyperparams::single_model(),
            ensemble: Hyperparams::ensemble(),
            head: HeadConfig::default(),
            finetune_per_fold: true,
            weights: WeightSource::default(),
            anchors: AnchorMap::default(),
            shufflenet: ShuffleNetConfig::default(),
            normalization: Normalization::imagenet(),
            only_folds: None,
        }
    }
}

impl CvConfig {
    pub fn spec(&self, kind: BackboneKind) -> BackboneSpec {
        match kind {
            BackboneKind::ShuffleNet => BackboneSpec::shufflenet(self.shufflenet.clone()),
            k => BackboneSpec::new(k),
        }
    }

    pub fn digest(&self) -> String {
        digest_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_id: usize,
    pub confusion: ConfusionMatrix3,
    /// `trace / total` of this fold's matrix, in percent.
    pub accuracy: f64,
    pub checkpoint: Option<PathBuf>,
    pub train_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold_id: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVReport {
    pub variant: Variant,
    pub k: usize,
    pub per_fold: Vec<FoldResult>,
    pub failures: Vec<FoldFailure>,
    /// Sum over completed folds.
    pub summed_confusion: Option<ConfusionMatrix3>,
    pub metrics: Option<MetricsReport>,
    pub config_hash: String,
    pub fold_plan_digest: String,
    /// Branch weight digests, identical before and after head training.
    pub branch_digests: BTreeMap<String, Vec<String>>,
}

impl CVReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty() && self.per_fold.len() == self.k
    }

    pub fn mean_fold_accuracy(&self) -> Option<f64> {
        (!self.per_fold.is_empty())
            .then(|| self.per_fold.iter().map(|f| f.accuracy).sum::<f64>() / self.per_fold.len() as f64)
    }
}

fn check_hygiene(source: &dyn SampleSource, test: &[usize], train: &[usize], val: &[usize]) -> Result<()> {
    let test_keys: BTreeSet<String> = test.iter().map(|&i| source.key(i)).collect();
    let leaked: Vec<String> = train
        .iter()
        .chain(val)
        .map(|&i| source.key(i))
        .filter(|k| test_keys.contains(k))
        .take(5)
        .collect();
    if leaked.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("test items appear in training data: {}", leaked.join(", "))))
    }
}

fn clone_finetuned(ft: &FinetunedBackbone) -> Result<FinetunedBackbone> {
    let b = &ft.backbone;
    let store = ParamStore::with_source(b.store.tensors()?.into_iter().collect(), b.store.dtype(), b.store.device(), 0);
    Ok(FinetunedBackbone {
        backbone: Backbone::build(b.spec.clone(), store, b.num_classes)?,
        history: ft.history.clone(),
    })
}

struct Driver<'a> {
    cfg: &'a CvConfig,
    source: &'a dyn SampleSource,
    plan: &'a FoldPlan,
    out: Option<&'a Path>,
    plan_digest: String,
    shared: HashMap<BackboneKind, FinetunedBackbone>,
    digests: BTreeMap<String, Vec<String>>,
}

impl Driver<'_> {
    fn finetuned(
        &mut self,
        kind: BackboneKind,
        fold: usize,
        train: &[usize],
        val: &[usize],
    ) -> Result<FinetunedBackbone> {
        if !self.cfg.finetune_per_fold {
            if let Some(ft) = self.shared.get(&kind) {
                return clone_finetuned(ft);
            }
        }
        let seed = derive_seed(self.cfg.seed, &format!("finetune-{}", kind.slug()), fold as u64);
        let weights = WeightSource {
            seed,
            ..self.cfg.weights.clone()
        };
        let pretrained = load_pretrained_spec(self.cfg.spec(kind), &weights)?;
        log::info!("fold {}: fine-tuning {kind}", fold + 1);
        let ft = finetune(pretrained, self.source, train, val, &self.cfg.finetune, seed)?;
        if !self.cfg.finetune_per_fold {
            log::warn!(
                "reusing the fold-{} fine-tune of {kind} in every fold; its training data overlaps later test folds",
                fold + 1
            );
            let copy = clone_finetuned(&ft)?;
            self.shared.insert(kind, copy);
        }
        Ok(ft)
    }

    fn context(&self, fold: usize) -> ManifestContext {
        let mut hyperparams = BTreeMap::new();
        hyperparams.insert("finetune".to_string(), self.cfg.finetune.clone());
        if self.cfg.variant.is_ensemble() {
            hyperparams.insert("ensemble".to_string(), self.cfg.ensemble.clone());
        }
        ManifestContext {
            normalization: self.cfg.normalization.clone(),
            anchors: self.cfg.anchors.clone(),
            hyperparams,
            fold_plan_digest: Some(self.plan_digest.clone()),
            fold_id: Some(fold + 1),
        }
    }

    fn run_fold(&mut self, fold: usize) -> Result<FoldResult> {
        let started = Instant::now();
        let test = self.plan.test_indices(fold).to_vec();
        let pool = self.plan.train_indices(fold);
        let split_seed = derive_seed(self.cfg.seed, "train-val", fold as u64);
        let (train, val) = split_train_val(&pool, self.cfg.finetune.val_fraction, split_seed)?;
        check_hygiene(self.source, &test, &train, &val)?;

        let ckpt_dir = self
            .out
            .map(|o| o.join(format!("fold{}-{}", fold + 1, self.cfg.variant.slug())));
        let kinds = self.cfg.variant.backbones();

        if !self.cfg.variant.is_ensemble() {
            let ft = self.finetuned(kinds[0], fold, &train, &val)?;
            let train_time_s = started.elapsed().as_secs_f64();
            let mut result = evaluate_fold(&ft.backbone, self.source, fold + 1, &test)?;
            if let Some(dir) = &ckpt_dir {
                result.checkpoint = Some(save_single(&ft.backbone, &self.context(fold), dir)?);
            }
            result.train_time_s = train_time_s;
            return Ok(result);
        }

        let mut generators = Vec::new();
        for &kind in &kinds {
            let ft = self.finetuned(kind, fold, &train, &val)?;
            generators.push(truncate_and_freeze(&ft, &self.cfg.anchors)?);
        }
        let before: Vec<String> = generators
            .iter()
            .map(|g| g.weights_digest())
            .collect::<Result<_>>()?;
        let model = build_ensemble(generators, self.cfg.head.clone(), derive_seed(self.cfg.seed, "head", fold as u64))?;
        let seed = derive_seed(self.cfg.seed, "ensemble", fold as u64);
        log::info!("fold {}: training the fused head", fold + 1);
        train_ensemble(&model, self.source, &train, &val, &self.cfg.ensemble, seed)?;
        let train_time_s = started.elapsed().as_secs_f64();

        let mut after = Vec::new();
        for g in model.branches() {
            after.push(g.weights_digest()?);
        }
        let mut sorted_before = before.clone();
        sorted_before.sort();
        let mut sorted_after = after.clone();
        sorted_after.sort();
        if sorted_before != sorted_after {
            return Err(Error::Checkpoint(format!(
                "fold {}: branch weights changed during head training",
                fold + 1
            )));
        }
        self.digests.insert(format!("fold{}", fold + 1), after);

        let mut result = evaluate_fold(&model, self.source, fold + 1, &test)?;
        if let Some(dir) = &ckpt_dir {
            result.checkpoint = Some(save_ensemble(&model, &self.context(fold), dir)?);
        }
        result.train_time_s = train_time_s;
        Ok(result)
    }
}

/// Train and evaluate `cfg.variant` on every fold of `plan`. A failing fold
/// is recorded and the remaining folds still run. Checkpoints go under
/// `checkpoint_dir` when given.
pub fn run_cross_validation(
    cfg: &CvConfig,
    source: &dyn SampleSource,
    plan: &FoldPlan,
    checkpoint_dir: Option<&Path>,
) -> Result<CVReport> {
    let mut problems = cfg.finetune.problems("hyperparams.finetune.");
    problems.extend(cfg.ensemble.problems("hyperparams.ensemble."));
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    cfg.head.validate()?;
    let folds: Vec<usize> = match &cfg.only_folds {
        Some(list) => {
            for &f in list {
                if f == 0 || f > plan.k {
                    return Err(Error::InvalidArgument(format!("fold {f} outside 1..={}", plan.k)));
                }
            }
            list.iter().map(|f| f - 1).collect()
        }
        None => (0..plan.k).collect(),
    };
    let plan_digest = digest_hex(serde_json::to_string(plan)?.as_bytes());
    let mut driver = Driver {
        cfg,
        source,
        plan,
        out: checkpoint_dir,
        plan_digest: plan_digest.clone(),
        shared: HashMap::new(),
        digests: BTreeMap::new(),
    };
    let mut per_fold = Vec::new();
    let mut failures = Vec::new();
    for fold in folds {
        match driver.run_fold(fold) {
            Ok(r) => {
                log::info!("fold {}: accuracy {:.2}%", r.fold_id, r.accuracy);
                per_fold.push(r);
            }
            Err(e) => {
                log::error!("fold {} failed: {e}", fold + 1);
                failures.push(FoldFailure {
                    fold_id: fold + 1,
                    error: e.to_string(),
                });
            }
        }
    }
    let matrices: Vec<ConfusionMatrix3> = per_fold.iter().map(|f| f.confusion).collect();
    let summed = sum_confusions(&matrices).ok();
    Ok(CVReport {
        variant: cfg.variant,
        k: plan.k,
        metrics: summed.as_ref().map(macro_average),
        summed_confusion: summed,
        per_fold,
        failures,
        config_hash: cfg.digest(),
        fold_plan_digest: plan_digest,
        branch_digests: driver.digests,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_parse() {
        assert_eq!("cvdnet3".parse::<Variant>().unwrap(), Variant::Cvdnet3);
        assert_eq!("Ensemble-CVDNet #1".replace("Ensemble-", "").parse::<Variant>().unwrap(), Variant::Cvdnet1);
        assert_eq!("EfficientNet-B0".parse::<Variant>().unwrap(), Variant::Efficientnetb0);
        assert!("resnet".parse::<Variant>().is_err());
        assert_eq!(Variant::Cvdnet2.backbones().len(), 3);
    }
}
