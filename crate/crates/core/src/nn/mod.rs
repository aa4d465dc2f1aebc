//! Forward-only convolutional building blocks for frozen feature extractors.
//!
//! Layouts follow the channels-last convention throughout: activations are
//! [`Tensor3`](crate::tensor::Tensor3) in `H × W × C` order and convolution
//! kernels are stored `KH × KW × C_in × C_out`, which is the layout used by
//! the published Keras checkpoints. Spatial padding reproduces TensorFlow's
//! `"same"`/`"valid"` rules exactly, including the asymmetric split of odd
//! padding totals and the exclusion of padded cells from `"same"` pooling.

mod conv;
mod ops;
mod pool;
pub mod weights;

pub use conv::{BatchNorm, Conv2d, ConvUnit, DepthwiseConv2d, SeparableConv2d};
pub use ops::{add, add_inplace, concat, crop, scale_channels, zero_pad};
pub use pool::{avg_pool, global_average_pool, max_pool};
pub use weights::{sha256_hex, ParamRole, ParamSource, StoreSource, SurrogateSource, WeightError, WeightStore};

/// Spatial padding mode for convolutions and pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

/// Explicit per-edge padding in pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Pads {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Pads {
    pub const ZERO: Pads = Pads {
        top: 0,
        bottom: 0,
        left: 0,
        right: 0,
    };

    pub fn symmetric(vertical: usize, horizontal: usize) -> Self {
        Pads {
            top: vertical,
            bottom: vertical,
            left: horizontal,
            right: horizontal,
        }
    }

    /// Padding that precedes a stride-2 "valid" convolution in the Keras
    /// mobile architectures: one fewer row/column on the leading edge when the
    /// input extent is even.
    pub fn correct(height: usize, width: usize, kernel: (usize, usize)) -> Self {
        let adjust = (1 - height % 2, 1 - width % 2);
        let half = (kernel.0 / 2, kernel.1 / 2);
        Pads {
            top: half.0 - adjust.0,
            bottom: half.0,
            left: half.1 - adjust.1,
            right: half.1,
        }
    }
}

/// Resolves `(pads, out_h, out_w)` for an input extent under TF padding rules.
pub(crate) fn resolve_padding(
    in_h: usize,
    in_w: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: Padding,
) -> (Pads, usize, usize) {
    match padding {
        Padding::Valid => {
            assert!(
                in_h >= kernel.0 && in_w >= kernel.1,
                "valid window {kernel:?} larger than input {in_h}x{in_w}"
            );
            let out_h = (in_h - kernel.0) / stride.0 + 1;
            let out_w = (in_w - kernel.1) / stride.1 + 1;
            (Pads::ZERO, out_h, out_w)
        }
        Padding::Same => {
            let out_h = in_h.div_ceil(stride.0);
            let out_w = in_w.div_ceil(stride.1);
            let total_h = ((out_h - 1) * stride.0 + kernel.0).saturating_sub(in_h);
            let total_w = ((out_w - 1) * stride.1 + kernel.1).saturating_sub(in_w);
            let pads = Pads {
                top: total_h / 2,
                bottom: total_h - total_h / 2,
                left: total_w / 2,
                right: total_w - total_w / 2,
            };
            (pads, out_h, out_w)
        }
    }
}

/// Pointwise nonlinearity applied after a convolution or normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Relu6,
    Swish,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Linear => v,
            Activation::Relu => v.max(0.0),
            Activation::Relu6 => v.clamp(0.0, 6.0),
            Activation::Swish => v / (1.0 + (-v).exp()),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }

    pub fn apply_slice(self, data: &mut [f32]) {
        if self == Activation::Linear {
            return;
        }
        for v in data {
            *v = self.apply(*v);
        }
    }
}
