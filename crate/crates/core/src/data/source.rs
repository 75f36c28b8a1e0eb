use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{load_and_preprocess, AugmentPolicy, DatasetIndex, ImageTensor, Normalization};
use crate::class::ClassLabel;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Random-access labeled images.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, i: usize) -> ClassLabel;

    fn load(&self, i: usize) -> Result<ImageTensor>;

    /// Stable identity of item `i` (the file path for on-disk data).
    fn key(&self, i: usize) -> String;

    /// Load `indices` in parallel. With a policy, item `i` is augmented with
    /// an RNG seeded from `(seed, i)`, so results do not depend on worker
    /// scheduling.
    fn load_batch(
        &self,
        indices: &[usize],
        augment: Option<(&AugmentPolicy, u64)>,
    ) -> Result<(Vec<ImageTensor>, Vec<ClassLabel>)> {
        let images = indices
            .par_iter()
            .map(|&i| {
                let img = self.load(i)?;
                Ok(match augment {
                    Some((policy, seed)) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "augment", i as u64));
                        super::augment(&img, policy, &mut rng)
                    }
                    None => img,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = indices.iter().map(|&i| self.label(i)).collect();
        Ok((images, labels))
    }
}

/// Images decoded from disk on demand.
#[derive(Debug, Clone)]
pub struct FileSource {
    pub index: DatasetIndex,
    pub normalization: Normalization,
    pub target: usize,
}

impl FileSource {
    pub fn new(index: DatasetIndex, normalization: Normalization) -> Self {
        Self {
            index,
            normalization,
            target: super::INPUT_SIZE,
        }
    }
}

impl SampleSource for FileSource {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn label(&self, i: usize) -> ClassLabel {
        self.index.entries[i].label
    }

    fn load(&self, i: usize) -> Result<ImageTensor> {
        load_and_preprocess(&self.index.entries[i].path, self.target, &self.normalization)
    }

    fn key(&self, i: usize) -> String {
        self.index.entries[i].path.display().to_string()
    }
}

/// Preprocessed images held in memory.
#[derive(Debug, Clone, Default)]
pub struct MemorySource {
    pub images: Vec<ImageTensor>,
    pub labels: Vec<ClassLabel>,
}

impl MemorySource {
    pub fn new(images: Vec<ImageTensor>, labels: Vec<ClassLabel>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }
}

impl SampleSource for MemorySource {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn label(&self, i: usize) -> ClassLabel {
        self.labels[i]
    }

    fn load(&self, i: usize) -> Result<ImageTensor> {
        Ok(self.images[i].clone())
    }

    fn key(&self, i: usize) -> String {
        format!("memory:{i}")
    }
}

/// Stack images into an `N × C × H × W` tensor.
pub fn batch_tensor(images: &[ImageTensor], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::Empty("image batch".into()))?;
    let (h, w, c) = first.shape();
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.shape() != (h, w, c) {
            return Err(Error::Shape(format!(
                "mixed image shapes in batch: {:?} vs {:?}",
                img.shape(),
                (h, w, c)
            )));
        }
        data.extend(img.to_chw());
    }
    Ok(Tensor::from_vec(data, (images.len(), c, h, w), device)?.to_dtype(dtype)?)
}
