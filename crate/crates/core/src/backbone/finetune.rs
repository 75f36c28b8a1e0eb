use serde::{Deserialize, Serialize};

use super::{Backbone, BackboneSpec};
use crate::class::NUM_CLASSES;
use crate::data::{batch_tensor, SampleSource};
use crate::error::Result;
use crate::seed::derive_seed;
use crate::train::{fit, FitJob, Hyperparams, TrainHistory};

/// A backbone adapted to the three-class task.
#[derive(Debug)]
pub struct FinetunedBackbone {
    pub backbone: Backbone,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneSummary {
    pub spec: BackboneSpec,
    pub history: TrainHistory,
}

impl FinetunedBackbone {
    pub fn spec(&self) -> &BackboneSpec {
        &self.backbone.spec
    }

    /// Wrap an already-adapted backbone without training it.
    pub fn untrained(backbone: Backbone) -> Self {
        Self {
            backbone,
            history: TrainHistory::default(),
        }
    }

    pub fn summary(&self) -> FinetuneSummary {
        FinetuneSummary {
            spec: self.backbone.spec.clone(),
            history: self.history.clone(),
        }
    }
}

/// Replace the classifier with a 3-class one (unless it already is) and
/// train the whole network on `train`, selecting on `val`.
pub fn finetune(
    backbone: Backbone,
    source: &dyn SampleSource,
    train: &[usize],
    val: &[usize],
    hp: &Hyperparams,
    seed: u64,
) -> Result<FinetunedBackbone> {
    let backbone = if backbone.num_classes == NUM_CLASSES {
        backbone
    } else {
        backbone.with_classes(NUM_CLASSES, derive_seed(seed, "classifier", 0))?
    };
    let labels: Vec<usize> = (0..source.len()).map(|i| source.label(i).index()).collect();
    let store = backbone.store.clone();
    let dtype = store.dtype();
    let device = store.device().clone();
    let policy = hp.augmentation.clone();
    let history = fit(FitJob {
        store: &store,
        params: backbone.optim_params(hp.new_layer_lr_factor),
        hp,
        seed,
        train,
        val,
        labels: &labels,
        forward: |idx: &[usize], ctx: &crate::nn::Ctx, aug: Option<u64>| {
            let (images, _) = source.load_batch(idx, aug.map(|s| (&policy, s)))?;
            let x = batch_tensor(&images, dtype, &device)?;
            backbone.forward(&x, ctx)
        },
    })?;
    Ok(FinetunedBackbone { backbone, history })
}
