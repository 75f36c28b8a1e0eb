use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetIndex, IndexEntry};
use crate::class::ClassLabel;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// `k` disjoint, class-stratified index sets covering the whole index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// All indices outside `fold`, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn to_file(&self, index: &DatasetIndex) -> FoldPlanFile {
        FoldPlanFile {
            k: self.k,
            seed: self.seed,
            folds: self
                .folds
                .iter()
                .map(|f| f.iter().map(|&i| index.entries[i].clone()).collect())
                .collect(),
        }
    }
}

/// On-disk form of a fold plan: the actual file paths, so a plan stays
/// meaningful even if the dataset directory gains files later.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlanFile {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<IndexEntry>>,
}

impl FoldPlanFile {
    /// Resolve paths against `index`; fails if a listed file is not indexed.
    pub fn resolve(&self, index: &DatasetIndex) -> Result<FoldPlan> {
        let lookup: std::collections::HashMap<&PathBuf, usize> = index
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (&e.path, i))
            .collect();
        let folds = self
            .folds
            .iter()
            .map(|f| {
                f.iter()
                    .map(|e| {
                        lookup.get(&e.path).copied().ok_or_else(|| {
                            Error::InvalidArgument(format!(
                                "fold plan lists {} which is not in the dataset index",
                                e.path.display()
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FoldPlan {
            k: self.k,
            seed: self.seed,
            folds,
        })
    }

    pub fn digest(&self) -> String {
        crate::seed::digest_hex(&serde_json::to_vec(self).expect("fold plan serializes"))
    }
}

/// Shuffle each class with a seeded RNG, then deal the concatenated class
/// lists round-robin. Dealing continues across class boundaries, so both the
/// per-class and the total fold sizes differ by at most one.
pub fn make_folds(index: &DatasetIndex, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    let mut folds = vec![Vec::new(); k];
    let mut slot = 0usize;
    for class in ClassLabel::ALL {
        let mut members: Vec<usize> = index
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == class)
            .map(|(i, _)| i)
            .collect();
        if members.len() < k {
            return Err(Error::TooFewForFolds {
                k,
                class: class.name().into(),
                count: members.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "folds", class.index() as u64));
        members.shuffle(&mut rng);
        for i in members {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { k, seed, folds })
}

/// Randomly hold out `round(fraction * n)` of `indices` for validation.
pub fn split_train_val(indices: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if indices.is_empty() {
        return Err(Error::Empty("training index set".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n_val = (fraction * indices.len() as f64).round() as usize;
    let mut shuffled = indices.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "train-val", 0));
    shuffled.shuffle(&mut rng);
    let val: BTreeSet<usize> = shuffled[..n_val].iter().copied().collect();
    let train: Vec<usize> = indices.iter().copied().filter(|i| !val.contains(i)).collect();
    Ok((train, val.into_iter().collect()))
}
