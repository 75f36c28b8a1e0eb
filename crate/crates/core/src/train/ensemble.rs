use std::collections::HashMap;

use candle_core::Tensor;

use super::{fit, FitJob, FoldResult, Hyperparams, TrainHistory};
use crate::class::ClassLabel;
use crate::data::{batch_tensor, SampleSource};
use crate::error::{Error, Result};
use crate::fusion::{predictions_from_logits, Classifier, EnsembleModel};
use crate::metrics::ConfusionMatrix3;
use crate::nn::Ctx;

/// Concatenated branch features of un-augmented images. Valid only while
/// the branches stay frozen, which they always are.
#[derive(Debug, Default)]
pub struct FeatureCache {
    items: HashMap<usize, Tensor>,
}

impl FeatureCache {
    pub fn build(model: &EnsembleModel, source: &dyn SampleSource, indices: &[usize], chunk: usize) -> Result<Self> {
        let mut items = HashMap::with_capacity(indices.len());
        let store = model.head_store();
        for part in indices.chunks(chunk.max(1)) {
            let (images, _) = source.load_batch(part, None)?;
            let x = batch_tensor(&images, store.dtype(), store.device())?;
            let f = model.features(&x)?;
            for (k, &i) in part.iter().enumerate() {
                items.insert(i, f.narrow(0, k, 1)?);
            }
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let rows = indices
            .iter()
            .map(|i| {
                self.items
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("item {i} is not in the feature cache")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&rows, 0)?)
    }
}

/// Train the head of `model` with its branches frozen. Without
/// augmentation, branch features are computed once and reused.
pub fn train_ensemble(
    model: &EnsembleModel,
    source: &dyn SampleSource,
    train: &[usize],
    val: &[usize],
    hp: &Hyperparams,
    seed: u64,
) -> Result<TrainHistory> {
    let labels: Vec<usize> = (0..source.len()).map(|i| source.label(i).index()).collect();
    let store = model.head_store();
    if hp.max_epochs == 0 {
        return Ok(TrainHistory::default());
    }
    let cache = if hp.augment {
        None
    } else {
        let all: Vec<usize> = train.iter().chain(val).copied().collect();
        Some(FeatureCache::build(model, source, &all, hp.batch_size)?)
    };
    let policy = hp.augmentation.clone();
    fit(FitJob {
        store,
        params: model.optim_params(),
        hp,
        seed,
        train,
        val,
        labels: &labels,
        forward: |idx: &[usize], ctx: &Ctx, aug: Option<u64>| {
            let features = match &cache {
                Some(c) => c.batch(idx)?,
                None => {
                    let (images, _) = source.load_batch(idx, aug.map(|s| (&policy, s)))?;
                    model.features(&batch_tensor(&images, store.dtype(), store.device())?)?
                }
            };
            model.head_logits(&features, ctx)
        },
    })
}

/// Confusion matrix of `model` over `indices`, in inference mode.
pub fn evaluate_indices(
    model: &dyn Classifier,
    source: &dyn SampleSource,
    indices: &[usize],
    chunk: usize,
) -> Result<ConfusionMatrix3> {
    if indices.is_empty() {
        return Err(Error::Empty("evaluation fold".into()));
    }
    let mut cm = ConfusionMatrix3::default();
    for part in indices.chunks(chunk.max(1)) {
        let (images, labels) = source.load_batch(part, None)?;
        let x = batch_tensor(&images, candle_core::DType::F32, &candle_core::Device::Cpu)?;
        for (p, t) in predictions_from_logits(&model.logits(&x, &Ctx::eval())?)?.iter().zip(labels) {
            cm.record(t, p.label);
        }
    }
    Ok(cm)
}

/// Evaluate on one test fold. The result carries no checkpoint or timing;
/// the cross-validation driver fills those in.
pub fn evaluate_fold(
    model: &dyn Classifier,
    source: &dyn SampleSource,
    fold_id: usize,
    test: &[usize],
) -> Result<FoldResult> {
    let confusion = evaluate_indices(model, source, test, 32)?;
    let per_class = ClassLabel::ALL.map(|c| test.iter().filter(|&&i| source.label(i) == c).count() as u64);
    for c in 0..3 {
        debug_assert_eq!(confusion.row_sum(c), per_class[c]);
    }
    Ok(FoldResult {
        fold_id,
        accuracy: confusion.micro_accuracy().unwrap_or(0.0),
        confusion,
        checkpoint: None,
        train_time_s: 0.0,
    })
}
