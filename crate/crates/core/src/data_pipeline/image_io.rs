use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{DataError, ImageRecord};
use crate::tensor::Tensor3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub rescale: f32,
    pub target_height: usize,
    pub target_width: usize,
    pub batch_size: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            rescale: 1.0 / 255.0,
            target_height: 224,
            target_width: 224,
            batch_size: 128,
        }
    }
}

impl PreprocessConfig {
    pub fn square(side: usize) -> Self {
        Self {
            target_height: side,
            target_width: side,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.rescale > 0.0 && self.rescale.is_finite()) {
            return Err(DataError::Config(format!("rescale must be > 0, got {}", self.rescale)));
        }
        if self.target_height < 32 || self.target_width < 32 {
            return Err(DataError::Config(format!(
                "target size must be at least 32x32, got {}x{}",
                self.target_height, self.target_width
            )));
        }
        if self.batch_size == 0 {
            return Err(DataError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Bilinear resize with half-pixel centers and edge clamping, operating on
/// raw channel values.
pub fn resize_bilinear(src: &Tensor3, out_h: usize, out_w: usize) -> Tensor3 {
    let (h, w, c) = src.shape();
    if (h, w) == (out_h, out_w) {
        return src.clone();
    }
    let taps = |in_len: usize, out_len: usize| -> Vec<(usize, usize, f32)> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(in_len - 1);
                (lo, hi, (pos - lo as f64) as f32)
            })
            .collect()
    };
    let rows = taps(h, out_h);
    let cols = taps(w, out_w);
    let mut out = Tensor3::zeros(out_h, out_w, c);
    let data = out.data_mut();
    for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
            let (a, b) = (src.pixel(y0, x0), src.pixel(y0, x1));
            let (d, e) = (src.pixel(y1, x0), src.pixel(y1, x1));
            let dst = &mut data[(oy * out_w + ox) * c..(oy * out_w + ox + 1) * c];
            for k in 0..c {
                let top = a[k] + (b[k] - a[k]) * fx;
                let bottom = d[k] + (e[k] - d[k]) * fx;
                dst[k] = top + (bottom - top) * fy;
            }
        }
    }
    out
}

/// Resizes an RGB image to the configured size and multiplies by `rescale`.
/// Shared by training and inference so both see identical tensors.
pub fn rgb_to_tensor(img: &RgbImage, config: &PreprocessConfig) -> Tensor3 {
    let (w, h) = img.dimensions();
    let raw = Tensor3::from_vec(
        h as usize,
        w as usize,
        3,
        img.as_raw().iter().map(|&v| f32::from(v)).collect(),
    );
    let mut t = resize_bilinear(&raw, config.target_height, config.target_width);
    let s = config.rescale;
    t.map_inplace(|v| v * s);
    t
}

pub fn decode_and_rescale(bytes: &[u8], config: &PreprocessConfig) -> Result<Tensor3, image::ImageError> {
    let img = image::load_from_memory(bytes)?;
    Ok(rgb_to_tensor(&img.to_rgb8(), config))
}

pub fn load_and_rescale(record: &ImageRecord, config: &PreprocessConfig) -> Result<Tensor3, DataError> {
    load_path(&record.path, config)
}

pub(super) fn load_path(path: &Path, config: &PreprocessConfig) -> Result<Tensor3, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    decode_and_rescale(&bytes, config).map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_image(v: u8) -> RgbImage {
        RgbImage::from_pixel(50, 40, image::Rgb([v, v, v]))
    }

    #[test]
    fn white_is_one_and_black_is_zero() {
        let cfg = PreprocessConfig::square(32);
        assert!(rgb_to_tensor(&constant_image(255), &cfg).data().iter().all(|&v| v == 1.0));
        assert!(rgb_to_tensor(&constant_image(0), &cfg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkerboard_halving_averages_each_two_by_two_cell() {
        // With half-pixel centers a 2x downscale samples exactly between four
        // source pixels, so every output is the mean of a 2x2 cell: two 0s and
        // two 255s in a checkerboard.
        let img = RgbImage::from_fn(8, 8, |x, y| {
            let v = if (x + y) % 2 == 0 { 255 } else { 0 };
            image::Rgb([v, v, v])
        });
        let raw = Tensor3::from_vec(8, 8, 3, img.as_raw().iter().map(|&v| f32::from(v)).collect());
        let out = resize_bilinear(&raw, 4, 4);
        assert_eq!(out.shape(), (4, 4, 3));
        for &v in out.data() {
            assert_eq!(v, 127.5);
        }
    }

    #[test]
    fn upscale_interpolates_between_centers() {
        // 1x2 row [0, 100] to 1x4: centers map to source x = -0.25, 0.25,
        // 0.75, 1.25; clamped to [0, 1] -> 0, 25, 75, 100.
        let src = Tensor3::from_vec(1, 2, 1, vec![0.0, 100.0]);
        let out = resize_bilinear(&src, 1, 4);
        assert_eq!(out.data(), &[0.0, 25.0, 75.0, 100.0]);
    }

    #[test]
    fn config_validation() {
        assert!(PreprocessConfig::default().validate().is_ok());
        assert!(PreprocessConfig::square(16).validate().is_err());
        let bad = PreprocessConfig {
            batch_size: 0,
            ..PreprocessConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PreprocessConfig {
            rescale: 0.0,
            ..PreprocessConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
