use super::layers::{conv_bn, BnParams};
use super::Backbone;
use crate::nn::{add_inplace, max_pool, zero_pad, Activation, ConvUnit, Padding, Pads, ParamSource, WeightError};
use crate::tensor::Tensor3;

const BN: BnParams = BnParams::eps(1.001e-5);

/// ResNet v1 with bottleneck blocks (50 and 101 layer variants).
pub struct ResNet {
    stem: ConvUnit,
    blocks: Vec<Bottleneck>,
}

struct Bottleneck {
    shortcut: Option<ConvUnit>,
    reduce: ConvUnit,
    spatial: ConvUnit,
    expand: ConvUnit,
}

impl ResNet {
    pub fn load(src: &mut dyn ParamSource, depths: &[usize; 4]) -> Result<Self, WeightError> {
        let stem = conv_bn(
            src,
            "conv1_conv",
            "conv1_bn",
            (7, 7),
            3,
            64,
            2,
            Padding::Valid,
            true,
            BN,
            Activation::Relu,
        )?;
        let mut blocks = Vec::new();
        let mut cin = 64;
        for (stage, (&depth, filters)) in depths.iter().zip([64usize, 128, 256, 512]).enumerate() {
            let stack = format!("conv{}", stage + 2);
            for i in 1..=depth {
                let name = format!("{stack}_block{i}");
                let stride = if i == 1 && stage > 0 { 2 } else { 1 };
                let shortcut = if i == 1 {
                    Some(unit(src, &name, 0, (1, 1), cin, 4 * filters, stride, Activation::Linear)?)
                } else {
                    None
                };
                let reduce = unit(src, &name, 1, (1, 1), cin, filters, stride, Activation::Relu)?;
                let spatial = unit(src, &name, 2, (3, 3), filters, filters, 1, Activation::Relu)?;
                let expand = unit(src, &name, 3, (1, 1), filters, 4 * filters, 1, Activation::Linear)?;
                blocks.push(Bottleneck {
                    shortcut,
                    reduce,
                    spatial,
                    expand,
                });
                cin = 4 * filters;
            }
        }
        Ok(Self { stem, blocks })
    }
}

#[allow(clippy::too_many_arguments)]
fn unit(
    src: &mut dyn ParamSource,
    block: &str,
    index: usize,
    kernel: (usize, usize),
    cin: usize,
    cout: usize,
    stride: usize,
    act: Activation,
) -> Result<ConvUnit, WeightError> {
    conv_bn(
        src,
        &format!("{block}_{index}_conv"),
        &format!("{block}_{index}_bn"),
        kernel,
        cin,
        cout,
        stride,
        if kernel.0 > 1 { Padding::Same } else { Padding::Valid },
        true,
        BN,
        act,
    )
}

impl Backbone for ResNet {
    fn forward(&self, x: &Tensor3) -> Tensor3 {
        let x = zero_pad(x, Pads::symmetric(3, 3));
        let x = self.stem.forward(&x);
        let x = zero_pad(&x, Pads::symmetric(1, 1));
        let mut x = max_pool(&x, 3, 2, Padding::Valid);
        for block in &self.blocks {
            let mut y = block.expand.forward(&block.spatial.forward(&block.reduce.forward(&x)));
            match &block.shortcut {
                Some(proj) => add_inplace(&mut y, &proj.forward(&x)),
                None => add_inplace(&mut y, &x),
            }
            Activation::Relu.apply_slice(y.data_mut());
            x = y;
        }
        x
    }

    fn feature_width(&self) -> usize {
        2048
    }
}
