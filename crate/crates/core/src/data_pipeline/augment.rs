use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::tensor::Tensor3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub horizontal_flip: bool,
    /// Zoom factor is drawn from `[1 - zoom_range, 1 + zoom_range]`.
    pub zoom_range: f64,
    /// Shear angle in radians is drawn from `[-shear_range, shear_range]`.
    pub shear_range: f64,
    pub enabled: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            horizontal_flip: true,
            zoom_range: 0.2,
            shear_range: 0.2,
            enabled: true,
        }
    }
}

impl AugmentationConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for (name, v) in [("zoom_range", self.zoom_range), ("shear_range", self.shear_range)] {
            if !(0.0..1.0).contains(&v) {
                return Err(DataError::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// One concrete draw of the random transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub flip: bool,
    pub zoom: f64,
    pub shear: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip: false,
        zoom: 1.0,
        shear: 0.0,
    };

    pub fn sample<R: Rng + ?Sized>(config: &AugmentationConfig, rng: &mut R) -> Self {
        if !config.enabled {
            return Self::IDENTITY;
        }
        let flip = config.horizontal_flip && rng.gen_bool(0.5);
        let zoom = if config.zoom_range > 0.0 {
            rng.gen_range(1.0 - config.zoom_range..=1.0 + config.zoom_range)
        } else {
            1.0
        };
        let shear = if config.shear_range > 0.0 {
            rng.gen_range(-config.shear_range..=config.shear_range)
        } else {
            0.0
        };
        Self { flip, zoom, shear }
    }
}

pub fn augment<R: Rng + ?Sized>(x: &Tensor3, config: &AugmentationConfig, rng: &mut R) -> Tensor3 {
    if !config.enabled {
        return x.clone();
    }
    apply_augmentation(x, &AugmentParams::sample(config, rng))
}

/// Applies flip, then the zoom/shear warp, then clips to `[0, 1]`.
///
/// The warp maps each output position `p` to the source position
/// `S·Z·(p − c) + c` in (row, column) coordinates, where `c` is the image
/// center, `Z = zoom·I` and `S = [[1, −sin θ], [0, cos θ]]`. Sources are
/// sampled bilinearly with out-of-range positions clamped to the border.
pub fn apply_augmentation(x: &Tensor3, p: &AugmentParams) -> Tensor3 {
    let (h, w, c) = x.shape();
    let mut src = x.clone();
    if p.flip {
        let data = src.data_mut();
        for row in data.chunks_exact_mut(w * c) {
            for col in 0..w / 2 {
                for k in 0..c {
                    row.swap(col * c + k, (w - 1 - col) * c + k);
                }
            }
        }
    }
    let mut out = if p.zoom != 1.0 || p.shear != 0.0 {
        warp(&src, p.zoom, p.shear)
    } else {
        src
    };
    out.map_inplace(|v| v.clamp(0.0, 1.0));
    debug_assert_eq!(out.shape(), (h, w, c));
    out
}

fn warp(src: &Tensor3, zoom: f64, shear: f64) -> Tensor3 {
    let (h, w, c) = src.shape();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let m = [[zoom, -shear.sin() * zoom], [0.0, shear.cos() * zoom]];
    let mut out = Tensor3::zeros(h, w, c);
    let data = out.data_mut();
    let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    for oy in 0..h {
        for ox in 0..w {
            let (dy, dx) = (oy as f64 - cy, ox as f64 - cx);
            let sy = clamp(m[0][0] * dy + m[0][1] * dx + cy, h);
            let sx = clamp(m[1][0] * dy + m[1][1] * dx + cx, w);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let dst = &mut data[(oy * w + ox) * c..(oy * w + ox + 1) * c];
            for (k, d) in dst.iter_mut().enumerate() {
                let at = |y: usize, x: usize| f64::from(src.get(y, x, k));
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                *d = (top * (1.0 - fy) + bottom * fy) as f32;
            }
        }
    }
    out
}
