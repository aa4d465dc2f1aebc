use super::layers::{conv_bn, BnParams};
use super::Backbone;
use crate::nn::{
    add_inplace, global_average_pool, scale_channels, zero_pad, Activation, BatchNorm, Conv2d, ConvUnit,
    DepthwiseConv2d, Padding, Pads, ParamRole, ParamSource, WeightError,
};
use crate::tensor::Tensor3;

const EPS: f32 = 1e-3;
const BN: BnParams = BnParams::eps(EPS);
/// Per-channel ImageNet standard deviations the published checkpoint was built around.
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// (kernel, repeats, filters in, filters out, expansion, stride)
const BLOCKS: [(usize, usize, usize, usize, usize, usize); 7] = [
    (3, 1, 32, 16, 1, 1),
    (3, 2, 16, 24, 6, 2),
    (5, 2, 24, 40, 6, 2),
    (3, 3, 40, 80, 6, 2),
    (5, 3, 80, 112, 6, 1),
    (5, 4, 112, 192, 6, 2),
    (3, 1, 192, 320, 6, 1),
];

/// EfficientNet-B0 including its built-in input normalization.
///
/// The network expects raw `[0, 255]` pixels: it rescales by 1/255, then
/// standardizes with the stored `normalization` mean/variance, then divides
/// by sqrt(ImageNet std). Feeding it inputs that are already in `[0, 1]`
/// squeezes the dynamic range by a further factor of 255.
pub struct EfficientNetB0 {
    mean: Vec<f32>,
    inv_scale: Vec<f32>,
    stem: ConvUnit,
    blocks: Vec<MbConv>,
    head: ConvUnit,
}

struct MbConv {
    expand: Option<ConvUnit>,
    depthwise: DepthwiseConv2d,
    depthwise_bn: BatchNorm,
    se_reduce: ConvUnit,
    se_expand: ConvUnit,
    project: ConvUnit,
    kernel: usize,
    stride: usize,
    residual: bool,
}

impl EfficientNetB0 {
    pub fn load(src: &mut dyn ParamSource) -> Result<Self, WeightError> {
        let mean = src.fetch("normalization/mean", &[3], ParamRole::NormMean)?;
        let variance = src.fetch("normalization/variance", &[3], ParamRole::NormVariance)?;
        // The sample count is carried by the checkpoint but unused at inference.
        src.fetch("normalization/count", &[], ParamRole::NormCount)?;
        let inv_scale = variance
            .iter()
            .zip(IMAGENET_STD)
            .map(|(&v, s)| 1.0 / (255.0 * v.sqrt().max(1e-7) * s.sqrt()))
            .collect();

        let stem = conv_bn(
            src,
            "stem_conv",
            "stem_bn",
            (3, 3),
            3,
            32,
            2,
            Padding::Valid,
            false,
            BN,
            Activation::Swish,
        )?;
        let mut blocks = Vec::new();
        for (i, &(kernel, repeats, fin, fout, expansion, stride)) in BLOCKS.iter().enumerate() {
            for j in 0..repeats {
                let name = format!("block{}{}_", i + 1, (b'a' + j as u8) as char);
                let (cin, s) = if j == 0 { (fin, stride) } else { (fout, 1) };
                blocks.push(MbConv::load(src, &name, kernel, cin, fout, expansion, s)?);
            }
        }
        let head = conv_bn(
            src,
            "top_conv",
            "top_bn",
            (1, 1),
            320,
            1280,
            1,
            Padding::Valid,
            false,
            BN,
            Activation::Swish,
        )?;
        Ok(Self {
            mean,
            inv_scale,
            stem,
            blocks,
            head,
        })
    }

    fn normalize(&self, x: &Tensor3) -> Tensor3 {
        let mut y = x.clone();
        for px in y.data_mut().chunks_exact_mut(3) {
            for ((v, m), s) in px.iter_mut().zip(&self.mean).zip(&self.inv_scale) {
                // x/255 - mean, then the combined divisor
                *v = (*v - 255.0 * m) * s;
            }
        }
        y
    }
}

impl MbConv {
    fn load(
        src: &mut dyn ParamSource,
        name: &str,
        kernel: usize,
        cin: usize,
        cout: usize,
        expansion: usize,
        stride: usize,
    ) -> Result<Self, WeightError> {
        let hidden = cin * expansion;
        let expand = if expansion != 1 {
            Some(conv_bn(
                src,
                &format!("{name}expand_conv"),
                &format!("{name}expand_bn"),
                (1, 1),
                cin,
                hidden,
                1,
                Padding::Valid,
                false,
                BN,
                Activation::Swish,
            )?)
        } else {
            None
        };
        let padding = if stride == 2 { Padding::Valid } else { Padding::Same };
        let depthwise = DepthwiseConv2d::load(
            src,
            &format!("{name}dwconv/kernel"),
            (kernel, kernel),
            hidden,
            (stride, stride),
            padding,
        )?;
        let depthwise_bn = BatchNorm::load(src, &format!("{name}bn"), hidden, EPS, true)?;
        let squeezed = (cin / 4).max(1);
        let se_reduce = ConvUnit::new(
            Conv2d::load(
                src,
                &format!("{name}se_reduce"),
                (1, 1),
                hidden,
                squeezed,
                (1, 1),
                Padding::Valid,
                true,
            )?,
            None,
            Activation::Swish,
        );
        let se_expand = ConvUnit::new(
            Conv2d::load(
                src,
                &format!("{name}se_expand"),
                (1, 1),
                squeezed,
                hidden,
                (1, 1),
                Padding::Valid,
                true,
            )?,
            None,
            Activation::Sigmoid,
        );
        let project = conv_bn(
            src,
            &format!("{name}project_conv"),
            &format!("{name}project_bn"),
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
            se_reduce,
            se_expand,
            project,
            kernel,
            stride,
            residual: stride == 1 && cin == cout,
        })
    }

    fn forward(&self, x: &Tensor3) -> Tensor3 {
        let mut y = match &self.expand {
            Some(e) => e.forward(x),
            None => x.clone(),
        };
        if self.stride == 2 {
            y = zero_pad(&y, Pads::correct(y.height(), y.width(), (self.kernel, self.kernel)));
        }
        let mut y = self.depthwise.forward(&y);
        self.depthwise_bn.forward_inplace(&mut y, Activation::Swish);

        let pooled = global_average_pool(&y);
        let pooled = Tensor3::from_vec(1, 1, pooled.len(), pooled);
        let gate = self.se_expand.forward(&self.se_reduce.forward(&pooled));
        scale_channels(&mut y, gate.data());

        let mut y = self.project.forward(&y);
        if self.residual {
            add_inplace(&mut y, x);
        }
        y
    }
}

impl Backbone for EfficientNetB0 {
    fn forward(&self, x: &Tensor3) -> Tensor3 {
        let x = self.normalize(x);
        let x = zero_pad(&x, Pads::correct(x.height(), x.width(), (3, 3)));
        let mut x = self.stem.forward(&x);
        for block in &self.blocks {
            x = block.forward(&x);
        }
        self.head.forward(&x)
    }

    fn feature_width(&self) -> usize {
        1280
    }
}
