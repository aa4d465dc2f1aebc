//! Corpus ingestion, split assignment, preprocessing and batching.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classes::{class_map, DiseaseClass, NUM_CLASSES};
use crate::seeding::{rng_for, tag};

mod augment;
mod batches;
mod image_io;

pub use augment::{apply_augmentation, augment, AugmentParams, AugmentationConfig};
pub use batches::{make_batches, Batch, BatchStream};
pub use image_io::{decode_and_rescale, load_and_rescale, resize_bilinear, rgb_to_tensor, PreprocessConfig};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_VAL_FRACTION: f64 = 0.25;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("dataset root not found: {0}")]
    NotFound(PathBuf),
    #[error("dataset structure: {0}")]
    Structure(String),
    #[error("split assignment: {0}")]
    Split(String),
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("split `{0}` has no records")]
    EmptySplit(Split),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub path: PathBuf,
    pub class_name: DiseaseClass,
    pub class_index: usize,
    /// `None` until [`assign_splits`] runs.
    pub split: Option<Split>,
}

impl ImageRecord {
    pub fn new(path: PathBuf, class: DiseaseClass) -> Self {
        Self {
            path,
            class_name: class,
            class_index: class.index(),
            split: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub path: PathBuf,
    pub reason: String,
}

/// Per-class, per-split record tallies. Unassigned records count under
/// `"unassigned"`.
pub type Counts = BTreeMap<String, BTreeMap<String, usize>>;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub seed: u64,
    pub records: Vec<ImageRecord>,
    pub rejects: Vec<Reject>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    schema_version: u32,
    root: PathBuf,
    seed: u64,
    classes: BTreeMap<String, usize>,
    records: Vec<ImageRecord>,
    rejects: Vec<Reject>,
}

impl DatasetManifest {
    pub fn counts(&self) -> Counts {
        let mut counts = Counts::new();
        for r in &self.records {
            let split = r.split.map_or("unassigned", Split::as_str);
            *counts
                .entry(r.class_name.to_string())
                .or_default()
                .entry(split.to_string())
                .or_default() += 1;
        }
        counts
    }

    pub fn class_total(&self, class: DiseaseClass) -> usize {
        self.records.iter().filter(|r| r.class_name == class).count()
    }

    pub fn split_records(&self, split: Split) -> Vec<&ImageRecord> {
        self.records.iter().filter(|r| r.split == Some(split)).collect()
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == Some(split)).count()
    }

    pub fn to_json(&self) -> String {
        let file = ManifestFile {
            schema_version: MANIFEST_SCHEMA_VERSION,
            root: self.root.clone(),
            seed: self.seed,
            classes: class_map(),
            records: self.records.clone(),
            rejects: self.rejects.clone(),
        };
        serde_json::to_string_pretty(&file).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let file: ManifestFile = serde_json::from_str(text).map_err(|e| DataError::Manifest(e.to_string()))?;
        if file.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(DataError::Manifest(format!(
                "unsupported schema_version {}",
                file.schema_version
            )));
        }
        if file.classes != class_map() {
            return Err(DataError::Manifest("class map differs from bacteria/brown/smut".into()));
        }
        for r in &file.records {
            if r.class_index != r.class_name.index() {
                return Err(DataError::Manifest(format!(
                    "{}: class_index {} does not match {}",
                    r.path.display(),
                    r.class_index,
                    r.class_name
                )));
            }
        }
        Ok(Self {
            root: file.root,
            seed: file.seed,
            records: file.records,
            rejects: file.rejects,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        if !path.exists() {
            return Err(DataError::NotFound(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Builds a manifest from `<root>/<ClassFolder>/<image>`.
///
/// Folders that do not map onto a class are skipped with a warning. Files
/// that fail to decode are excluded and listed in `rejects`.
pub fn scan_dataset(root: &Path) -> Result<DatasetManifest, DataError> {
    if !root.is_dir() {
        return Err(DataError::NotFound(root.to_path_buf()));
    }
    let mut folders: Vec<(PathBuf, DiseaseClass)> = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        match DiseaseClass::from_folder_name(&name) {
            Some(class) => folders.push((entry.path(), class)),
            None => log::warn!("skipping folder `{name}`: not a recognized class"),
        }
    }
    if folders.is_empty() {
        return Err(DataError::Structure(format!(
            "no class folders (bacteria/brown/smut) under {}",
            root.display()
        )));
    }
    folders.sort();

    let mut candidates: Vec<(PathBuf, DiseaseClass)> = Vec::new();
    for (dir, class) in &folders {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(Result::ok)
            .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
            .filter(|e| !e.file_name().to_string_lossy().starts_with('.'))
            .map(|e| e.path())
            .collect();
        files.sort();
        candidates.extend(files.into_iter().map(|p| (p, *class)));
    }

    let checked: Vec<Result<ImageRecord, Reject>> = candidates
        .into_par_iter()
        .map(|(path, class)| match image::open(&path) {
            Ok(_) => Ok(ImageRecord::new(path, class)),
            Err(e) => Err(Reject {
                path,
                reason: e.to_string(),
            }),
        })
        .collect();

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    for item in checked {
        match item {
            Ok(r) => records.push(r),
            Err(r) => {
                log::warn!("rejecting {}: {}", r.path.display(), r.reason);
                rejects.push(r);
            }
        }
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        seed: DEFAULT_SEED,
        records,
        rejects,
    })
}

/// Stratified, seeded train/val/test assignment.
///
/// Each class is shuffled independently and contributes
/// `round(n × val_fraction)` validation and `round(n × test_fraction)` test
/// records; the remainder trains.
pub fn assign_splits(
    manifest: &DatasetManifest,
    val_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    if !(val_fraction >= 0.0 && test_fraction >= 0.0 && val_fraction + test_fraction < 1.0) {
        return Err(DataError::Config(format!(
            "fractions must be non-negative with val + test < 1 (got {val_fraction} + {test_fraction})"
        )));
    }
    let mut out = manifest.clone();
    out.seed = seed;
    for class in DiseaseClass::ALL {
        let mut members: Vec<usize> = (0..out.records.len())
            .filter(|&i| out.records[i].class_name == class)
            .collect();
        let n = members.len();
        if n == 0 {
            continue;
        }
        let n_val = (n as f64 * val_fraction).round() as usize;
        let n_test = (n as f64 * test_fraction).round() as usize;
        if n_val + n_test >= n {
            return Err(DataError::Split(format!(
                "class {class} has {n} records; {n_val} val + {n_test} test leaves none to train"
            )));
        }
        members.shuffle(&mut rng_for(seed, &[tag::SPLIT, class.index() as u64]));
        for (rank, &i) in members.iter().enumerate() {
            out.records[i].split = Some(if rank < n_val {
                Split::Val
            } else if rank < n_val + n_test {
                Split::Test
            } else {
                Split::Train
            });
        }
    }
    Ok(out)
}

/// Checks the corpus against the expected 3 × 40 shape.
pub fn expected_shape_problems(manifest: &DatasetManifest, per_class: usize) -> Vec<String> {
    let mut problems = Vec::new();
    for class in DiseaseClass::ALL {
        let n = manifest.class_total(class);
        if n != per_class {
            problems.push(format!("class {class}: {n} records, expected {per_class}"));
        }
    }
    let total = manifest.records.len();
    if total != per_class * NUM_CLASSES {
        problems.push(format!("{total} records, expected {}", per_class * NUM_CLASSES));
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(per_class: usize) -> DatasetManifest {
        let mut records = Vec::new();
        for class in DiseaseClass::ALL {
            for i in 0..per_class {
                records.push(ImageRecord::new(PathBuf::from(format!("{class}/{i:03}.jpg")), class));
            }
        }
        DatasetManifest {
            root: PathBuf::from("corpus"),
            seed: DEFAULT_SEED,
            records,
            rejects: Vec::new(),
        }
    }

    #[test]
    fn quarter_validation_is_ten_per_class() {
        let m = assign_splits(&synthetic(40), 0.25, 0.0, 42).unwrap();
        assert_eq!(m.split_len(Split::Train), 90);
        assert_eq!(m.split_len(Split::Val), 30);
        for class in DiseaseClass::ALL {
            assert_eq!(m.counts()[class.as_str()]["val"], 10);
        }
    }

    #[test]
    fn zero_validation_trains_everything() {
        let m = assign_splits(&synthetic(40), 0.0, 0.0, 42).unwrap();
        assert_eq!(m.split_len(Split::Train), 120);
    }

    #[test]
    fn splits_are_deterministic_and_seed_dependent() {
        let base = synthetic(40);
        let a = assign_splits(&base, 0.25, 0.0, 42).unwrap();
        let b = assign_splits(&base, 0.25, 0.0, 42).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = assign_splits(&base, 0.25, 0.0, 43).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn class_without_train_record_is_rejected() {
        let err = assign_splits(&synthetic(1), 0.5, 0.0, 1).unwrap_err();
        assert!(matches!(err, DataError::Split(_)), "{err}");
        assert!(matches!(
            assign_splits(&synthetic(4), 0.6, 0.4, 1),
            Err(DataError::Config(_))
        ));
    }

    #[test]
    fn manifest_json_has_exact_keys_and_round_trips() {
        let m = assign_splits(&synthetic(2), 0.5, 0.0, 3).unwrap();
        let text = m.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["classes", "records", "rejects", "root", "schema_version", "seed"]);
        let rec = v["records"][0].as_object().unwrap();
        let mut rk: Vec<&str> = rec.keys().map(String::as_str).collect();
        rk.sort();
        assert_eq!(rk, ["class_index", "class_name", "path", "split"]);
        assert_eq!(DatasetManifest::from_json(&text).unwrap(), m);
    }

    #[test]
    fn manifest_rejects_unknown_schema() {
        let text = synthetic(1).to_json().replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(DatasetManifest::from_json(&text).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn splits_partition_and_stratify(
                per_class in 2usize..60,
                val in 0.0f64..0.45,
                test in 0.0f64..0.3,
                seed in any::<u64>(),
            ) {
                let base = synthetic(per_class);
                if let Ok(m) = assign_splits(&base, val, test, seed) {
                    prop_assert!(m.records.iter().all(|r| r.split.is_some()));
                    let total: usize = Split::ALL.iter().map(|&s| m.split_len(s)).sum();
                    prop_assert_eq!(total, base.records.len());
                    for class in DiseaseClass::ALL {
                        let n_val = m.records.iter()
                            .filter(|r| r.class_name == class && r.split == Some(Split::Val))
                            .count() as f64;
                        prop_assert!((n_val - per_class as f64 * val).abs() <= 1.0);
                        prop_assert!(m.records.iter().any(|r| r.class_name == class && r.split == Some(Split::Train)));
                    }
                }
            }
        }
    }
}
