use super::layers::{conv_bn, BnParams};
use super::Backbone;
use crate::nn::{
    add_inplace, zero_pad, Activation, BatchNorm, ConvUnit, DepthwiseConv2d, Padding, Pads, ParamSource, WeightError,
};
use crate::tensor::Tensor3;

const EPS: f32 = 1e-3;
const BN: BnParams = BnParams::eps(EPS);

/// (output filters, stride of first repeat, repeats)
const STAGES: [(usize, usize, usize); 7] = [
    (16, 1, 1),
    (24, 2, 2),
    (32, 2, 3),
    (64, 2, 4),
    (96, 1, 3),
    (160, 2, 3),
    (320, 1, 1),
];

/// MobileNetV2 at width multiplier 1.0.
pub struct MobileNetV2 {
    stem: ConvUnit,
    blocks: Vec<InvertedResidual>,
    head: ConvUnit,
}

struct InvertedResidual {
    expand: Option<ConvUnit>,
    depthwise: DepthwiseConv2d,
    depthwise_bn: BatchNorm,
    project: ConvUnit,
    stride: usize,
    residual: bool,
}

impl MobileNetV2 {
    pub fn load(src: &mut dyn ParamSource) -> Result<Self, WeightError> {
        let stem = conv_bn(
            src,
            "Conv1",
            "bn_Conv1",
            (3, 3),
            3,
            32,
            2,
            Padding::Same,
            false,
            BN,
            Activation::Relu6,
        )?;
        let mut blocks = Vec::new();
        let mut cin = 32;
        let mut id = 0;
        for (filters, first_stride, repeats) in STAGES {
            for r in 0..repeats {
                let stride = if r == 0 { first_stride } else { 1 };
                let expansion = if id == 0 { 1 } else { 6 };
                blocks.push(InvertedResidual::load(src, id, cin, filters, stride, expansion)?);
                cin = filters;
                id += 1;
            }
        }
        let head = conv_bn(
            src,
            "Conv_1",
            "Conv_1_bn",
            (1, 1),
            cin,
            1280,
            1,
            Padding::Valid,
            false,
            BN,
            Activation::Relu6,
        )?;
        Ok(Self { stem, blocks, head })
    }
}

impl InvertedResidual {
    fn load(
        src: &mut dyn ParamSource,
        id: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        expansion: usize,
    ) -> Result<Self, WeightError> {
        let prefix = if id == 0 {
            "expanded_conv_".to_string()
        } else {
            format!("block_{id}_")
        };
        let hidden = cin * expansion;
        let expand = if id == 0 {
            None
        } else {
            Some(conv_bn(
                src,
                &format!("{prefix}expand"),
                &format!("{prefix}expand_BN"),
                (1, 1),
                cin,
                hidden,
                1,
                Padding::Valid,
                false,
                BN,
                Activation::Relu6,
            )?)
        };
        let padding = if stride == 2 { Padding::Valid } else { Padding::Same };
        let depthwise = DepthwiseConv2d::load(
            src,
            &format!("{prefix}depthwise/kernel"),
            (3, 3),
            hidden,
            (stride, stride),
            padding,
        )?;
        let depthwise_bn = BatchNorm::load(src, &format!("{prefix}depthwise_BN"), hidden, EPS, true)?;
        let project = conv_bn(
            src,
            &format!("{prefix}project"),
            &format!("{prefix}project_BN"),
            (1, 1),
            hidden,
            cout,
            1,
            Padding::Valid,
            false,
            BN,
            Activation::Linear,
        )?;
        Ok(Self {
            expand,
            depthwise,
            depthwise_bn,
            project,
            stride,
            residual: cin == cout && stride == 1,
        })
    }

    fn forward(&self, x: &Tensor3) -> Tensor3 {
        let mut y = match &self.expand {
            Some(e) => e.forward(x),
            None => x.clone(),
        };
        if self.stride == 2 {
            y = zero_pad(&y, Pads::correct(y.height(), y.width(), (3, 3)));
        }
        let mut y = self.depthwise.forward(&y);
        self.depthwise_bn.forward_inplace(&mut y, Activation::Relu6);
        let mut y = self.project.forward(&y);
        if self.residual {
            add_inplace(&mut y, x);
        }
        y
    }
}

impl Backbone for MobileNetV2 {
    fn forward(&self, x: &Tensor3) -> Tensor3 {
        let mut x = self.stem.forward(x);
        for block in &self.blocks {
            x = block.forward(&x);
        }
        self.head.forward(&x)
    }

    fn feature_width(&self) -> usize {
        1280
    }
}
