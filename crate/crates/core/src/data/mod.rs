//! Dataset discovery, image preprocessing, augmentation and fold planning.

mod augment;
mod folds;
mod image;
mod source;

pub use augment::{augment, AugmentDraw, AugmentPolicy};
pub use folds::{make_folds, split_train_val, FoldPlan, FoldPlanFile};
pub use image::{load_and_preprocess, preprocess_image, ImageTensor, Normalization, INPUT_SIZE};
pub use source::{batch_tensor, FileSource, MemorySource, SampleSource};

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::class::ClassLabel;
use crate::error::{Error, Result};

const PNG_MAGIC: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Directory-name aliases per class, matched case-insensitively.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ClassDirAliases {
    pub covid19: Vec<String>,
    pub normal: Vec<String>,
    pub viral_pneumonia: Vec<String>,
}

impl Default for ClassDirAliases {
    fn default() -> Self {
        Self {
            covid19: vec!["COVID-19".into(), "COVID".into(), "COVID19".into()],
            normal: vec!["NORMAL".into()],
            viral_pneumonia: vec![
                "Viral Pneumonia".into(),
                "Viral-Pneumonia".into(),
                "Viral_Pneumonia".into(),
            ],
        }
    }
}

impl ClassDirAliases {
    pub fn for_class(&self, class: ClassLabel) -> &[String] {
        match class {
            ClassLabel::Covid19 => &self.covid19,
            ClassLabel::Normal => &self.normal,
            ClassLabel::ViralPneumonia => &self.viral_pneumonia,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub path: PathBuf,
    pub label: ClassLabel,
}

/// Labeled image paths, sorted by path within the canonical class order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub entries: Vec<IndexEntry>,
    pub class_counts: BTreeMap<ClassLabel, usize>,
}

impl DatasetIndex {
    pub fn from_entries(entries: Vec<IndexEntry>) -> Self {
        let mut class_counts: BTreeMap<ClassLabel, usize> =
            ClassLabel::ALL.iter().map(|c| (*c, 0)).collect();
        for e in &entries {
            *class_counts.entry(e.label).or_default() += 1;
        }
        Self {
            entries,
            class_counts,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, class: ClassLabel) -> usize {
        self.class_counts.get(&class).copied().unwrap_or(0)
    }

    pub fn labels(&self) -> Vec<ClassLabel> {
        self.entries.iter().map(|e| e.label).collect()
    }
}

/// Scans `<root>/<class dir>/*.png` for each of the three classes.
pub fn scan_dataset(root: &Path, aliases: &ClassDirAliases) -> Result<DatasetIndex> {
    let subdirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();

    let mut entries = Vec::new();
    for class in ClassLabel::ALL {
        let wanted = aliases.for_class(class);
        let dir = subdirs
            .iter()
            .find(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .map(|n| wanted.iter().any(|w| w.eq_ignore_ascii_case(n)))
                    .unwrap_or(false)
            })
            .ok_or_else(|| Error::MissingClassDir {
                class: class.name().to_string(),
                root: root.to_path_buf(),
                candidates: wanted.join(", "),
            })?;

        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .and_then(|x| x.to_str())
                        .map(|x| x.eq_ignore_ascii_case("png"))
                        .unwrap_or(false)
            })
            .collect();
        if paths.is_empty() {
            return Err(Error::EmptyClass { dir: dir.clone() });
        }
        paths.sort();
        for path in paths {
            check_png_signature(&path)?;
            entries.push(IndexEntry { path, label: class });
        }
    }
    Ok(DatasetIndex::from_entries(entries))
}

fn check_png_signature(path: &Path) -> Result<()> {
    let mut buf = [0u8; 8];
    fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut buf))
        .map_err(|e| Error::image(path, e))?;
    if buf != PNG_MAGIC {
        return Err(Error::image(path, "not a PNG file"));
    }
    Ok(())
}
