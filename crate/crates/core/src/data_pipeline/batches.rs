use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::augment::{augment, AugmentationConfig};
use super::image_io::{load_path, PreprocessConfig};
use super::{DataError, DatasetManifest, ImageRecord, Split};
use crate::classes::NUM_CLASSES;
use crate::seeding::{rng_for, tag};
use crate::tensor::Tensor3;

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Vec<Tensor3>,
    pub labels: Vec<[f32; NUM_CLASSES]>,
    /// Positions of the batch members within the stream's record list.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Re-iterable source of batches for one split.
///
/// Images are decoded once at construction; each epoch re-orders (when
/// shuffling) and re-augments (train split only) from the cached tensors.
/// Every random draw is keyed by `(seed, epoch, record)`, so parallel
/// decoding and augmentation produce the same output as a sequential pass.
#[derive(Clone, Debug)]
pub struct BatchStream {
    split: Split,
    records: Vec<ImageRecord>,
    base: Vec<Tensor3>,
    batch_size: usize,
    clamp_warning: Option<String>,
    augmentation: AugmentationConfig,
    shuffle: bool,
    seed: u64,
}

pub fn make_batches(
    manifest: &DatasetManifest,
    split: Split,
    preprocess: &PreprocessConfig,
    augmentation: &AugmentationConfig,
    shuffle: bool,
    seed: u64,
) -> Result<BatchStream, DataError> {
    preprocess.validate()?;
    augmentation.validate()?;
    let records: Vec<ImageRecord> = manifest.split_records(split).into_iter().cloned().collect();
    if records.is_empty() {
        return Err(DataError::EmptySplit(split));
    }
    let base = records
        .par_iter()
        .map(|r| load_path(&r.path, preprocess))
        .collect::<Result<Vec<_>, _>>()?;
    BatchStream::from_tensors(split, records, base, preprocess.batch_size, augmentation, shuffle, seed)
}

impl BatchStream {
    /// Builds a stream over already-preprocessed tensors.
    pub fn from_tensors(
        split: Split,
        records: Vec<ImageRecord>,
        base: Vec<Tensor3>,
        batch_size: usize,
        augmentation: &AugmentationConfig,
        shuffle: bool,
        seed: u64,
    ) -> Result<Self, DataError> {
        if records.is_empty() {
            return Err(DataError::EmptySplit(split));
        }
        if batch_size == 0 {
            return Err(DataError::Config("batch_size must be >= 1".into()));
        }
        assert_eq!(records.len(), base.len());
        let n = records.len();
        let clamp_warning = (batch_size > n).then(|| {
            let msg = format!("batch_size {batch_size} exceeds the {n}-record {split} split; using {n}");
            log::warn!("{msg}");
            msg
        });
        let augmentation = if split == Split::Train {
            *augmentation
        } else {
            AugmentationConfig::disabled()
        };
        Ok(Self {
            split,
            records,
            base,
            batch_size: batch_size.min(n),
            clamp_warning,
            augmentation,
            shuffle,
            seed,
        })
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Effective batch size after clamping to the split size.
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn clamp_warning(&self) -> Option<&str> {
        self.clamp_warning.as_deref()
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    /// Preprocessed, unaugmented tensors in record order.
    pub fn base_tensors(&self) -> &[Tensor3] {
        &self.base
    }

    pub fn is_augmented(&self) -> bool {
        self.augmentation.enabled
    }

    pub fn num_batches(&self) -> usize {
        self.len().div_ceil(self.batch_size)
    }

    pub fn label(&self, index: usize) -> [f32; NUM_CLASSES] {
        self.records[index].class_name.one_hot()
    }

    /// Record visiting order for `epoch`.
    pub fn order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if self.shuffle {
            order.shuffle(&mut rng_for(self.seed, &[tag::SHUFFLE, epoch]));
        }
        order
    }

    /// The image for record `index` as seen during `epoch`.
    pub fn image(&self, index: usize, epoch: u64) -> Tensor3 {
        if self.augmentation.enabled {
            let mut rng = rng_for(self.seed, &[tag::AUGMENT, epoch, index as u64]);
            augment(&self.base[index], &self.augmentation, &mut rng)
        } else {
            self.base[index].clone()
        }
    }

    /// All batches of one epoch; every record appears exactly once.
    pub fn epoch(&self, epoch: u64) -> impl Iterator<Item = Batch> + '_ {
        let order = self.order(epoch);
        let chunks: Vec<Vec<usize>> = order.chunks(self.batch_size).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |indices| {
            let images = indices.par_iter().map(|&i| self.image(i, epoch)).collect();
            let labels = indices.iter().map(|&i| self.label(i)).collect();
            Batch {
                images,
                labels,
                indices,
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::DiseaseClass;
    use std::path::PathBuf;

    fn stream(split: Split, n: usize, batch: usize, aug: AugmentationConfig, shuffle: bool) -> BatchStream {
        let records: Vec<ImageRecord> = (0..n)
            .map(|i| {
                let mut r = ImageRecord::new(PathBuf::from(format!("{i}.png")), DiseaseClass::ALL[i % 3]);
                r.split = Some(split);
                r
            })
            .collect();
        let base = (0..n)
            .map(|i| Tensor3::from_fn(8, 8, 3, |y, x, c| ((i + y * 3 + x + c) % 17) as f32 / 16.0))
            .collect();
        BatchStream::from_tensors(split, records, base, batch, &aug, shuffle, 42).unwrap()
    }

    #[test]
    fn oversized_batch_clamps_with_warning() {
        let s = stream(Split::Train, 90, 128, AugmentationConfig::default(), true);
        assert_eq!(s.batch_size(), 90);
        assert!(s.clamp_warning().unwrap().contains("128"));
        let batches: Vec<Batch> = s.epoch(0).collect();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), 90);
    }

    #[test]
    fn every_record_once_per_epoch() {
        let s = stream(Split::Train, 23, 5, AugmentationConfig::default(), true);
        for epoch in 0..3 {
            let mut seen: Vec<usize> = s.epoch(epoch).flat_map(|b| b.indices).collect();
            seen.sort();
            assert_eq!(seen, (0..23).collect::<Vec<_>>());
        }
        assert_ne!(s.order(0), s.order(1));
    }

    #[test]
    fn unshuffled_val_stream_is_repeatable_and_unaugmented() {
        let s = stream(Split::Val, 30, 8, AugmentationConfig::default(), false);
        assert!(!s.is_augmented());
        let a: Vec<Batch> = s.epoch(0).collect();
        let b: Vec<Batch> = s.epoch(0).collect();
        assert_eq!(a, b);
        assert_eq!(a[0].indices, vec![0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(a[0].images[3], s.base_tensors()[3]);
    }

    #[test]
    fn labels_are_one_hot() {
        let s = stream(Split::Train, 9, 4, AugmentationConfig::disabled(), false);
        for b in s.epoch(0) {
            for (i, l) in b.indices.iter().zip(&b.labels) {
                assert_eq!(l.iter().sum::<f32>(), 1.0);
                assert_eq!(l.iter().filter(|&&v| v != 0.0).count(), 1);
                assert_eq!(l[s.records()[*i].class_index], 1.0);
            }
        }
    }

    #[test]
    fn disabled_augmentation_emits_base_tensors() {
        let s = stream(Split::Train, 12, 5, AugmentationConfig::disabled(), true);
        for b in s.epoch(2) {
            for (i, img) in b.indices.iter().zip(&b.images) {
                assert_eq!(img, &s.base_tensors()[*i]);
            }
        }
    }

    #[test]
    fn augmentation_is_reproducible_per_epoch_and_varies_across_epochs() {
        let s = stream(Split::Train, 6, 6, AugmentationConfig::default(), false);
        assert_eq!(s.image(2, 5), s.image(2, 5));
        assert_ne!(s.image(2, 5), s.image(2, 6));
    }
}
