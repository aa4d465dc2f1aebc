//! Convolutional feature extractors with Keras-compatible parameter names.
//!
//! Each architecture pulls its parameters from a [`ParamSource`] under the
//! layer names the Keras application models use, so a checkpoint exported
//! from Keras (`<layer>/<variable>` keys) loads without renaming. Every
//! backbone stops at the last convolutional feature map; pooling belongs to
//! the classification head.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::{ParamSource, WeightError};
use crate::tensor::Tensor3;

mod densenet;
mod efficientnet;
mod inception;
mod mobilenet;
mod nasnet;
mod resnet;
mod vgg;

/// A frozen feature extractor.
pub trait Backbone: Send + Sync {
    /// Runs the network on one `H × W × 3` image and returns the final
    /// feature map.
    fn forward(&self, x: &Tensor3) -> Tensor3;

    /// Channel count of the final feature map.
    fn feature_width(&self) -> usize;
}

/// The ten supported architectures, in comparison-table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneName {
    Resnet50,
    Densenet121,
    Vgg16,
    Mobilenetv2,
    Inceptionv3,
    Efficientnetb0,
    Resnet101,
    Vgg19,
    Nasnet,
    Densenet169,
}

impl BackboneName {
    pub const ALL: [BackboneName; 10] = [
        BackboneName::Resnet50,
        BackboneName::Densenet121,
        BackboneName::Vgg16,
        BackboneName::Mobilenetv2,
        BackboneName::Inceptionv3,
        BackboneName::Efficientnetb0,
        BackboneName::Resnet101,
        BackboneName::Vgg19,
        BackboneName::Nasnet,
        BackboneName::Densenet169,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneName::Resnet50 => "resnet50",
            BackboneName::Densenet121 => "densenet121",
            BackboneName::Vgg16 => "vgg16",
            BackboneName::Mobilenetv2 => "mobilenetv2",
            BackboneName::Inceptionv3 => "inceptionv3",
            BackboneName::Efficientnetb0 => "efficientnetb0",
            BackboneName::Resnet101 => "resnet101",
            BackboneName::Vgg19 => "vgg19",
            BackboneName::Nasnet => "nasnet",
            BackboneName::Densenet169 => "densenet169",
        }
    }

    /// Human-readable model name as it appears in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            BackboneName::Resnet50 => "ResNet-50",
            BackboneName::Densenet121 => "DenseNet121",
            BackboneName::Vgg16 => "VGG16",
            BackboneName::Mobilenetv2 => "MobileNetV2",
            BackboneName::Inceptionv3 => "Inception V3",
            BackboneName::Efficientnetb0 => "EfficientNetB0",
            BackboneName::Resnet101 => "ResNet-101",
            BackboneName::Vgg19 => "VGG19",
            BackboneName::Nasnet => "NasNet",
            BackboneName::Densenet169 => "DenseNet169",
        }
    }

    /// Canonical ImageNet input side length.
    pub fn default_input_size(self) -> usize {
        match self {
            BackboneName::Inceptionv3 => 299,
            _ => 224,
        }
    }

    /// Smallest input side the architecture accepts.
    pub fn min_input_size(self) -> usize {
        match self {
            BackboneName::Inceptionv3 => 75,
            _ => 32,
        }
    }

    pub fn feature_width(self) -> usize {
        match self {
            BackboneName::Resnet50 | BackboneName::Resnet101 | BackboneName::Inceptionv3 => 2048,
            BackboneName::Densenet121 => 1024,
            BackboneName::Densenet169 => 1664,
            BackboneName::Vgg16 | BackboneName::Vgg19 => 512,
            BackboneName::Mobilenetv2 | BackboneName::Efficientnetb0 => 1280,
            BackboneName::Nasnet => 1056,
        }
    }
}

impl fmt::Display for BackboneName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown backbone `{0}`")]
pub struct UnknownBackbone(pub String);

impl FromStr for BackboneName {
    type Err = UnknownBackbone;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '_', ' '], "");
        BackboneName::ALL
            .into_iter()
            .find(|b| b.as_str() == key)
            .ok_or_else(|| UnknownBackbone(s.to_string()))
    }
}

/// Assembles `name` with parameters drawn from `src`.
pub fn build_backbone(
    name: BackboneName,
    src: &mut dyn ParamSource,
) -> Result<Box<dyn Backbone>, WeightError> {
    Ok(match name {
        BackboneName::Resnet50 => Box::new(resnet::ResNet::load(src, &[3, 4, 6, 3])?),
        BackboneName::Resnet101 => Box::new(resnet::ResNet::load(src, &[3, 4, 23, 3])?),
        BackboneName::Densenet121 => Box::new(densenet::DenseNet::load(src, &[6, 12, 24, 16])?),
        BackboneName::Densenet169 => Box::new(densenet::DenseNet::load(src, &[6, 12, 32, 32])?),
        BackboneName::Vgg16 => Box::new(vgg::Vgg::load(src, &[2, 2, 3, 3, 3])?),
        BackboneName::Vgg19 => Box::new(vgg::Vgg::load(src, &[2, 2, 4, 4, 4])?),
        BackboneName::Mobilenetv2 => Box::new(mobilenet::MobileNetV2::load(src)?),
        BackboneName::Inceptionv3 => Box::new(inception::InceptionV3::load(src)?),
        BackboneName::Efficientnetb0 => Box::new(efficientnet::EfficientNetB0::load(src)?),
        BackboneName::Nasnet => Box::new(nasnet::NasNetMobile::load(src)?),
    })
}

/// Shorthand used by the architecture modules.
pub(crate) mod layers {
    use crate::nn::{
        Activation, BatchNorm, Conv2d, ConvUnit, Padding, ParamSource, WeightError,
    };

    /// `Conv2D` + `BatchNormalization` + activation with explicit layer names.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_bn(
        src: &mut dyn ParamSource,
        conv_name: &str,
        bn_name: &str,
        kernel: (usize, usize),
        cin: usize,
        cout: usize,
        stride: usize,
        padding: Padding,
        use_bias: bool,
        bn: BnParams,
        act: Activation,
    ) -> Result<ConvUnit, WeightError> {
        let conv = Conv2d::load(src, conv_name, kernel, cin, cout, (stride, stride), padding, use_bias)?;
        let bn = BatchNorm::load(src, bn_name, cout, bn.epsilon, bn.has_gamma)?;
        Ok(ConvUnit::new(conv, Some(bn), act))
    }

    #[derive(Clone, Copy)]
    pub struct BnParams {
        pub epsilon: f32,
        pub has_gamma: bool,
    }

    impl BnParams {
        pub const fn eps(epsilon: f32) -> Self {
            Self {
                epsilon,
                has_gamma: true,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse_leniently_and_round_trip() {
        for b in BackboneName::ALL {
            assert_eq!(b.as_str().parse::<BackboneName>().unwrap(), b);
        }
        assert_eq!("MobileNet-V2".parse::<BackboneName>().unwrap(), BackboneName::Mobilenetv2);
        assert_eq!("ResNet_50".parse::<BackboneName>().unwrap(), BackboneName::Resnet50);
        assert!("alexnet".parse::<BackboneName>().is_err());
    }

    #[test]
    fn every_backbone_builds_and_reports_its_width() {
        use crate::nn::SurrogateSource;
        for name in BackboneName::ALL {
            let mut src = SurrogateSource::new(7);
            let net = build_backbone(name, &mut src).unwrap();
            assert_eq!(net.feature_width(), name.feature_width(), "{name}");
            let side = name.min_input_size().max(64);
            let x = Tensor3::from_fn(side, side, 3, |y, x, c| ((y * 7 + x * 3 + c) % 11) as f32 / 10.0);
            let y = net.forward(&x);
            assert_eq!(y.channels(), name.feature_width(), "{name}");
            assert!(y.data().iter().all(|v| v.is_finite()), "{name}");
        }
    }
}
