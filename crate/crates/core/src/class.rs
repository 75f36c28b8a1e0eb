use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const NUM_CLASSES: usize = 3;

/// Diagnostic class. Discriminants give the canonical (alphabetical) order
/// used for tensors, confusion matrices and the loss weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    #[serde(rename = "COVID-19")]
    Covid19 = 0,
    #[serde(rename = "Normal")]
    Normal = 1,
    #[serde(rename = "Viral-Pneumonia")]
    ViralPneumonia = 2,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] =
        [ClassLabel::Covid19, ClassLabel::Normal, ClassLabel::ViralPneumonia];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self, Error> {
        Self::ALL.get(i).copied().ok_or(Error::InvalidLabel(i))
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Covid19 => "COVID-19",
            ClassLabel::Normal => "Normal",
            ClassLabel::ViralPneumonia => "Viral-Pneumonia",
        }
    }

    /// Short lowercase form used in file names.
    pub fn slug(self) -> &'static str {
        match self {
            ClassLabel::Covid19 => "covid19",
            ClassLabel::Normal => "normal",
            ClassLabel::ViralPneumonia => "viral_pneumonia",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "covid19" | "covid" | "0" => Ok(ClassLabel::Covid19),
            "normal" | "healthy" | "1" => Ok(ClassLabel::Normal),
            "viralpneumonia" | "pneumonia" | "2" => Ok(ClassLabel::ViralPneumonia),
            _ => Err(Error::InvalidArgument(format!("unknown class {s:?}"))),
        }
    }
}
