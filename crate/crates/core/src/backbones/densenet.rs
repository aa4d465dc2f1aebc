use super::layers::{conv_bn, BnParams};
use super::Backbone;
use crate::nn::{
    avg_pool, concat, max_pool, zero_pad, Activation, BatchNorm, Conv2d, ConvUnit, Padding, Pads, ParamSource,
    WeightError,
};
use crate::tensor::Tensor3;

const EPS: f32 = 1.001e-5;
const GROWTH: usize = 32;

/// DenseNet-BC (121 and 169 layer variants).
pub struct DenseNet {
    stem: ConvUnit,
    stages: Vec<Stage>,
    final_bn: BatchNorm,
    width: usize,
}

struct Stage {
    layers: Vec<DenseLayer>,
    transition: Option<Transition>,
}

struct DenseLayer {
    pre_bn: BatchNorm,
    bottleneck: ConvUnit,
    conv: Conv2d,
}

struct Transition {
    bn: BatchNorm,
    conv: Conv2d,
}

impl DenseNet {
    pub fn load(src: &mut dyn ParamSource, blocks: &[usize; 4]) -> Result<Self, WeightError> {
        let stem = conv_bn(
            src,
            "conv1_conv",
            "conv1_bn",
            (7, 7),
            3,
            64,
            2,
            Padding::Valid,
            false,
            BnParams::eps(EPS),
            Activation::Relu,
        )?;
        let mut channels = 64;
        let mut stages = Vec::new();
        for (i, &count) in blocks.iter().enumerate() {
            let block = format!("conv{}", i + 2);
            let mut layers = Vec::with_capacity(count);
            for j in 1..=count {
                let name = format!("{block}_block{j}");
                let pre_bn = BatchNorm::load(src, &format!("{name}_0_bn"), channels, EPS, true)?;
                let bottleneck = conv_bn(
                    src,
                    &format!("{name}_1_conv"),
                    &format!("{name}_1_bn"),
                    (1, 1),
                    channels,
                    4 * GROWTH,
                    1,
                    Padding::Valid,
                    false,
                    BnParams::eps(EPS),
                    Activation::Relu,
                )?;
                let conv = Conv2d::load(
                    src,
                    &format!("{name}_2_conv"),
                    (3, 3),
                    4 * GROWTH,
                    GROWTH,
                    (1, 1),
                    Padding::Same,
                    false,
                )?;
                layers.push(DenseLayer {
                    pre_bn,
                    bottleneck,
                    conv,
                });
                channels += GROWTH;
            }
            let transition = if i < 3 {
                let name = format!("pool{}", i + 2);
                let bn = BatchNorm::load(src, &format!("{name}_bn"), channels, EPS, true)?;
                let reduced = channels / 2;
                let conv = Conv2d::load(
                    src,
                    &format!("{name}_conv"),
                    (1, 1),
                    channels,
                    reduced,
                    (1, 1),
                    Padding::Valid,
                    false,
                )?;
                channels = reduced;
                Some(Transition { bn, conv })
            } else {
                None
            };
            stages.push(Stage { layers, transition });
        }
        let final_bn = BatchNorm::load(src, "bn", channels, EPS, true)?;
        Ok(Self {
            stem,
            stages,
            final_bn,
            width: channels,
        })
    }
}

impl Backbone for DenseNet {
    fn forward(&self, x: &Tensor3) -> Tensor3 {
        let x = zero_pad(x, Pads::symmetric(3, 3));
        let x = self.stem.forward(&x);
        let x = zero_pad(&x, Pads::symmetric(1, 1));
        let mut x = max_pool(&x, 3, 2, Padding::Valid);
        for stage in &self.stages {
            for layer in &stage.layers {
                let y = layer.pre_bn.forward(&x, Activation::Relu);
                let y = layer.conv.forward(&layer.bottleneck.forward(&y));
                x = concat(&[&x, &y]);
            }
            if let Some(t) = &stage.transition {
                let y = t.bn.forward(&x, Activation::Relu);
                x = avg_pool(&t.conv.forward(&y), 2, 2, Padding::Valid);
            }
        }
        self.final_bn.forward_inplace(&mut x, Activation::Relu);
        x
    }

    fn feature_width(&self) -> usize {
        self.width
    }
}
