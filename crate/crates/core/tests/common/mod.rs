//! Synthetic leaf corpora shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use paddydoc::classes::DiseaseClass;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FOLDERS: [(&str, DiseaseClass); 3] = [
    ("Bacterial leaf blight", DiseaseClass::Bacteria),
    ("Brown spot", DiseaseClass::Brown),
    ("Leaf smut", DiseaseClass::Smut),
];

/// A green leaf with class-specific lesions: pale yellow streaks for
/// bacteria, round brown spots for brown, small black specks for smut.
pub fn leaf_image(class: DiseaseClass, variant: u64, size: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(variant * 31 + class.index() as u64);
    let base = [40 + rng.gen_range(0..30), 120 + rng.gen_range(0..50), 30 + rng.gen_range(0..30)];
    let mut img = RgbImage::from_fn(size, size, |x, y| {
        let shade = ((x + 2 * y) % 9) as u8;
        Rgb([base[0] + shade, base[1] + shade, base[2]])
    });
    let s = size as f32;
    match class {
        DiseaseClass::Bacteria => {
            for _ in 0..3 {
                let x0 = rng.gen_range(0.0..s);
                let width = rng.gen_range(0.06..0.12) * s;
                for y in 0..size {
                    for x in 0..size {
                        let dx = (x as f32 - x0 - 0.3 * y as f32).abs();
                        if dx < width {
                            img.put_pixel(x, y, Rgb([225, 215, 140]));
                        }
                    }
                }
            }
        }
        DiseaseClass::Brown => {
            for _ in 0..6 {
                let (cx, cy) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
                let r = rng.gen_range(0.06..0.11) * s;
                paint_disc(&mut img, cx, cy, r, Rgb([130, 70, 25]));
            }
        }
        DiseaseClass::Smut => {
            for _ in 0..25 {
                let (cx, cy) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
                paint_disc(&mut img, cx, cy, 0.025 * s + 1.0, Rgb([15, 15, 20]));
            }
        }
    }
    img
}

fn paint_disc(img: &mut RgbImage, cx: f32, cy: f32, r: f32, color: Rgb<u8>) {
    let (w, h) = img.dimensions();
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f32 - cx, y as f32 - cy);
            if dx * dx + dy * dy <= r * r {
                img.put_pixel(x, y, color);
            }
        }
    }
}

/// Writes `per_class` images per class folder under `root` and returns the
/// file paths. JPEG is used when `jpeg` is set, PNG otherwise.
pub fn write_corpus(root: &Path, per_class: usize, size: u32, jpeg: bool) -> Vec<PathBuf> {
    let mut paths = Vec::new();
    for (folder, class) in FOLDERS {
        let dir = root.join(folder);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            let ext = if jpeg { "jpg" } else { "png" };
            let path = dir.join(format!("img_{i:03}.{ext}"));
            leaf_image(class, i as u64, size).save(&path).unwrap();
            paths.push(path);
        }
    }
    paths
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

pub fn encode_jpeg(img: &RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Jpeg).unwrap();
    out.into_inner()
}

/// Solid red, green and blue images (one colour per class, brightness
/// varying per image) as unaugmented train and val streams.
pub fn solid_color_streams(
    side: usize,
    train_per_class: usize,
    val_per_class: usize,
    seed: u64,
) -> (paddydoc::data_pipeline::BatchStream, paddydoc::data_pipeline::BatchStream) {
    use paddydoc::data_pipeline::{AugmentationConfig, BatchStream, ImageRecord, Split};
    use paddydoc::tensor::Tensor3;
    let build = |split: Split, per_class: usize| {
        let mut records = Vec::new();
        let mut tensors = Vec::new();
        for (k, class) in DiseaseClass::ALL.into_iter().enumerate() {
            for i in 0..per_class {
                let mut r = ImageRecord::new(PathBuf::from(format!("{split}/{class}_{i}.png")), class);
                r.split = Some(split);
                records.push(r);
                let level = 0.6 + 0.4 * (i as f32 / per_class.max(1) as f32);
                tensors.push(Tensor3::from_fn(side, side, 3, |_, _, c| if c == k { level } else { 0.05 }));
            }
        }
        BatchStream::from_tensors(split, records, tensors, 128, &AugmentationConfig::disabled(), split == Split::Train, seed)
            .unwrap()
    };
    (build(Split::Train, train_per_class), build(Split::Val, val_per_class))
}

/// Trains a head on a small synthetic leaf corpus under `root`, over a
/// surrogate VGG16 at `side` pixels, and returns the model with its
/// best-epoch checkpoint.
pub fn trained_leaf_model(
    root: &Path,
    side: usize,
    per_class: usize,
    epochs: usize,
) -> (paddydoc::model_zoo::ModelHandle, paddydoc::trainer::Checkpoint) {
    use paddydoc::backbones::BackboneName;
    use paddydoc::data_pipeline::{assign_splits, make_batches, scan_dataset, AugmentationConfig, PreprocessConfig, Split};
    use paddydoc::model_zoo::{build_model_with, BackboneSpec, EarlyStoppingConfig, HeadSpec, HyperParams, WeightSource};
    let data = root.join("data");
    write_corpus(&data, per_class, 64, false);
    let manifest = assign_splits(&scan_dataset(&data).unwrap(), 0.25, 0.0, 42).unwrap();
    let pre = PreprocessConfig::square(side);
    let off = AugmentationConfig::disabled();
    let train = make_batches(&manifest, Split::Train, &pre, &off, true, 42).unwrap();
    let val = make_batches(&manifest, Split::Val, &pre, &off, false, 42).unwrap();
    let spec = BackboneSpec::new(BackboneName::Vgg16).with_input_size(side);
    let mut model = build_model_with(&spec, &HeadSpec::default(), 3, &WeightSource::Surrogate(5), 0).unwrap();
    let hp = HyperParams {
        max_epochs: epochs,
        early_stopping: EarlyStoppingConfig {
            patience: epochs,
            ..EarlyStoppingConfig::default()
        },
        ..HyperParams::default()
    };
    let (_, checkpoint) = paddydoc::trainer::train(&mut model, &train, &val, &hp, 42, None).unwrap();
    let model = checkpoint.restore(None).unwrap();
    (model, checkpoint)
}
