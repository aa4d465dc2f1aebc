//! The closed three-class label set.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const NUM_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiseaseClass {
    Bacteria,
    Brown,
    Smut,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown class `{0}`")]
pub struct UnknownClass(pub String);

impl DiseaseClass {
    /// Ordered by class index.
    pub const ALL: [DiseaseClass; NUM_CLASSES] = [DiseaseClass::Bacteria, DiseaseClass::Brown, DiseaseClass::Smut];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DiseaseClass::Bacteria => "bacteria",
            DiseaseClass::Brown => "brown",
            DiseaseClass::Smut => "smut",
        }
    }

    /// Maps a corpus folder name onto a class by case-insensitive prefix,
    /// e.g. "Bacterial leaf blight", "Brown spot", "Leaf smut".
    pub fn from_folder_name(folder: &str) -> Option<Self> {
        let lower = folder.trim().to_lowercase();
        let key = lower
            .strip_prefix("leaf")
            .map(|rest| rest.trim_start_matches([' ', '_', '-']))
            .filter(|rest| !rest.is_empty())
            .unwrap_or(&lower);
        if key.starts_with("bacteri") {
            Some(DiseaseClass::Bacteria)
        } else if key.starts_with("brown") {
            Some(DiseaseClass::Brown)
        } else if key.starts_with("smut") {
            Some(DiseaseClass::Smut)
        } else {
            None
        }
    }

    pub fn one_hot(self) -> [f32; NUM_CLASSES] {
        let mut v = [0.0; NUM_CLASSES];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for DiseaseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DiseaseClass {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownClass(s.to_string()))
    }
}

/// `{"bacteria": 0, "brown": 1, "smut": 2}`
pub fn class_map() -> BTreeMap<String, usize> {
    DiseaseClass::ALL.iter().map(|c| (c.as_str().to_string(), c.index())).collect()
}

pub fn class_names() -> Vec<String> {
    DiseaseClass::ALL.iter().map(|c| c.as_str().to_string()).collect()
}
