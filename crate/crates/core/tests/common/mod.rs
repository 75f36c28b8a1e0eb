#![allow(dead_code)]

use std::path::PathBuf;

use lungfuse_core::data::{IndexEntry, MemorySource};
use lungfuse_core::{ClassLabel, DatasetIndex, ImageTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Index with fake paths and the given per-class counts.
pub fn synthetic_index(counts: [usize; 3]) -> DatasetIndex {
    let mut entries = Vec::new();
    for (c, &n) in ClassLabel::ALL.iter().zip(&counts) {
        for i in 0..n {
            entries.push(IndexEntry {
                path: PathBuf::from(format!("/synthetic/{}/{i:05}.png", c.slug())),
                label: *c,
            });
        }
    }
    DatasetIndex::from_entries(entries)
}

/// Colored noise: each class has its own dominant channel, so the classes
/// are trivially separable.
pub fn colored_noise(per_class: usize, size: usize, seed: u64) -> MemorySource {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_class * 3 {
        let class = ClassLabel::ALL[i % 3];
        let mut data = Vec::with_capacity(size * size * 3);
        for _ in 0..size * size {
            for ch in 0..3 {
                let base = if ch == class.index() { 1.5 } else { -1.0 };
                data.push(base + rng.gen_range(-0.5f32..0.5));
            }
        }
        images.push(ImageTensor::new(data, size, size, 3).expect("valid image"));
        labels.push(class);
    }
    MemorySource::new(images, labels).expect("same lengths")
}
