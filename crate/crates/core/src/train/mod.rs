//! Mini-batch training, fold evaluation, and the cross-validation driver.

mod cv;
mod ensemble;

pub use cv::{run_cross_validation, CvConfig, CVReport, FoldFailure, FoldResult, Variant};
pub use ensemble::{evaluate_fold, evaluate_indices, train_ensemble, FeatureCache};

use std::collections::BTreeMap;

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::class::NUM_CLASSES;
use crate::data::AugmentPolicy;
use crate::error::{Error, Result};
use crate::fusion::{argmax, weighted_cross_entropy_logits, DEFAULT_CLASS_WEIGHTS};
use crate::nn::{Adam, AdamConfig, Ctx, OptimParam, ParamStore};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub global_lr: f64,
    pub l2_reg: f64,
    pub validation_frequency: usize,
    /// Learning-rate multiplier for freshly added layers (fine-tuning only).
    pub new_layer_lr_factor: f64,
    pub class_weights: [f64; NUM_CLASSES],
    pub val_fraction: f64,
    pub augment: bool,
    pub augmentation: AugmentPolicy,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::single_model()
    }
}

impl Hyperparams {
    /// Backbone fine-tuning.
    pub fn single_model() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 10,
            global_lr: 1e-4,
            l2_reg: 1e-4,
            validation_frequency: 65,
            new_layer_lr_factor: 10.0,
            class_weights: DEFAULT_CLASS_WEIGHTS,
            val_fraction: 0.10,
            augment: true,
            augmentation: AugmentPolicy::standard(),
        }
    }

    /// Head training on frozen branches.
    pub fn ensemble() -> Self {
        Self {
            global_lr: 1e-3,
            new_layer_lr_factor: 1.0,
            ..Self::single_model()
        }
    }

    /// Every offending key, prefixed with `prefix`.
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut bad = |key: &str, why: String| out.push(format!("{prefix}{key}: {why}"));
        if self.batch_size == 0 {
            bad("batch_size", "must be at least 1".into());
        }
        for (key, v) in [
            ("global_lr", self.global_lr),
            ("new_layer_lr_factor", self.new_layer_lr_factor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                bad(key, format!("must be positive, got {v}"));
            }
        }
        if !(self.l2_reg.is_finite() && self.l2_reg >= 0.0) {
            bad("l2_reg", format!("must be non-negative, got {}", self.l2_reg));
        }
        if self.validation_frequency == 0 {
            bad("validation_frequency", "must be at least 1".into());
        }
        if self.class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            bad("class_weights", format!("entries must be positive, got {:?}", self.class_weights));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            bad("val_fraction", format!("must lie in (0, 1), got {}", self.val_fraction));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems("");
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Loss of the very first mini-batch, before any update.
    pub initial_train_loss: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    pub validations: Vec<ValidationRecord>,
    /// Checkpoint that was restored at the end of training.
    pub selected: Option<ValidationRecord>,
}

impl TrainHistory {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Inputs to [`fit`]. `forward` maps dataset indices to `N×3` logits; the
/// optional seed asks it to augment the batch.
pub struct FitJob<'a, F> {
    pub store: &'a ParamStore,
    pub params: Vec<OptimParam>,
    pub hp: &'a Hyperparams,
    pub seed: u64,
    pub train: &'a [usize],
    pub val: &'a [usize],
    /// Class index of every dataset item.
    pub labels: &'a [usize],
    pub forward: F,
}

/// Per-sample losses and correctness, evaluated in inference mode.
pub(crate) fn score<F>(forward: &F, indices: &[usize], labels: &[usize], w: &[f64; 3], chunk: usize) -> Result<(f64, f64)>
where
    F: Fn(&[usize], &Ctx, Option<u64>) -> Result<Tensor>,
{
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for part in indices.chunks(chunk.max(1)) {
        let logits = forward(part, &Ctx::eval(), None)?;
        let y: Vec<usize> = part.iter().map(|&i| labels[i]).collect();
        let l = crate::fusion::loss_scalar(&weighted_cross_entropy_logits(&logits, &y, w)?)?;
        loss_sum += l * part.len() as f64;
        correct += count_correct(&logits, &y)?;
    }
    let n = indices.len().max(1) as f64;
    Ok((loss_sum / n, 100.0 * correct as f64 / n))
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> Result<usize> {
    let rows = logits.to_dtype(candle_core::DType::F64)?.to_vec2::<f64>()?;
    Ok(rows.iter().zip(labels).filter(|(r, &y)| argmax(r) == y).count())
}

/// Adam over shuffled mini-batches for `hp.max_epochs` epochs. Validates
/// every `hp.validation_frequency` iterations and after the last one, then
/// restores the parameters (and batch-norm statistics) with the best
/// validation accuracy.
pub fn fit<F>(job: FitJob<'_, F>) -> Result<TrainHistory>
where
    F: Fn(&[usize], &Ctx, Option<u64>) -> Result<Tensor>,
{
    let FitJob {
        store,
        params,
        hp,
        seed,
        train,
        val,
        labels,
        forward,
    } = job;
    hp.validate()?;
    let mut history = TrainHistory::default();
    if hp.max_epochs == 0 {
        return Ok(history);
    }
    if train.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let w = hp.class_weights;
    let mut opt = Adam::new(params, AdamConfig::new(hp.global_lr, hp.l2_reg));
    let mut best: Option<(ValidationRecord, BTreeMap<String, Tensor>)> = None;
    let mut iteration = 0usize;
    let total_iters = hp.max_epochs * train.len().div_ceil(hp.batch_size);

    let mut validate = |epoch: usize, iteration: usize, history: &mut TrainHistory| -> Result<()> {
        if val.is_empty() {
            return Ok(());
        }
        let (loss, accuracy) = score(&forward, val, labels, &w, hp.batch_size)?;
        let rec = ValidationRecord {
            epoch,
            iteration,
            loss,
            accuracy,
        };
        log::debug!("validation at iteration {iteration}: loss {loss:.4}, accuracy {accuracy:.2}%");
        if best.as_ref().is_none_or(|(b, _)| accuracy > b.accuracy) {
            best = Some((rec.clone(), store.tensors()?));
        }
        history.validations.push(rec);
        Ok(())
    };

    for epoch in 1..=hp.max_epochs {
        let mut order = train.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle", epoch as u64)));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut iters = 0usize;
        for batch in order.chunks(hp.batch_size) {
            iteration += 1;
            iters += 1;
            let ctx = Ctx::train(derive_seed(seed, "iteration", iteration as u64));
            let aug = hp.augment.then(|| derive_seed(seed, "augment-epoch", epoch as u64));
            let logits = forward(batch, &ctx, aug)?;
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let loss = weighted_cross_entropy_logits(&logits, &y, &w)?;
            let value = crate::fusion::loss_scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, iteration });
            }
            history.initial_train_loss.get_or_insert(value);
            let grads = loss.backward()?;
            opt.step(&grads)?;
            loss_sum += value * batch.len() as f64;
            correct += count_correct(&logits, &y)?;
            if iteration % hp.validation_frequency == 0 || iteration == total_iters {
                validate(epoch, iteration, &mut history)?;
            }
        }
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: 100.0 * correct as f64 / order.len() as f64,
            iterations: iters,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4}, train accuracy {:.2}%",
            rec.train_loss,
            rec.train_accuracy
        );
        history.epochs.push(rec);
    }

    if let Some((rec, snapshot)) = best {
        store.restore(&snapshot)?;
        history.selected = Some(rec);
    }
    Ok(history)
}
