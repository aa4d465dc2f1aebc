use super::layers::{conv_bn, BnParams};
use super::Backbone;
use crate::nn::{
    add, add_inplace, avg_pool, concat, crop, max_pool, zero_pad, Activation, BatchNorm, Conv2d, ConvUnit, Padding,
    Pads, ParamSource, SeparableConv2d, WeightError,
};
use crate::tensor::Tensor3;

const EPS: f32 = 1e-3;
const CELLS_PER_STAGE: usize = 4;
const BASE_FILTERS: usize = 44;

/// NASNet-A Mobile (4 @ 1056).
pub struct NasNetMobile {
    stem: ConvUnit,
    cells: Vec<Cell>,
}

enum Cell {
    Normal(NormalCell),
    Reduction(ReductionCell),
}

/// Shape bookkeeping used to decide how a cell's previous input is adapted.
#[derive(Clone, Copy)]
struct Port {
    channels: usize,
    /// Number of stride-2 reductions applied so far.
    level: usize,
}

enum Adjust {
    Identity,
    /// Spatial halving by two offset 1x1 paths.
    Reduce { path1: Conv2d, path2: Conv2d, bn: BatchNorm },
    Project { conv: Conv2d, bn: BatchNorm },
}

struct SepBlock {
    first: SeparableConv2d,
    first_bn: BatchNorm,
    second: SeparableConv2d,
    second_bn: BatchNorm,
    kernel: usize,
    stride: usize,
}

struct NormalCell {
    adjust: Adjust,
    conv: Conv2d,
    bn: BatchNorm,
    left1: SepBlock,
    right1: SepBlock,
    left2: SepBlock,
    right2: SepBlock,
    left5: SepBlock,
}

struct ReductionCell {
    adjust: Adjust,
    conv: Conv2d,
    bn: BatchNorm,
    left1: SepBlock,
    right1: SepBlock,
    right2: SepBlock,
    right3: SepBlock,
    left4: SepBlock,
}

fn relu(x: &Tensor3) -> Tensor3 {
    let mut y = x.clone();
    Activation::Relu.apply_slice(y.data_mut());
    y
}

fn conv1x1(src: &mut dyn ParamSource, name: &str, cin: usize, cout: usize) -> Result<Conv2d, WeightError> {
    Conv2d::load(src, name, (1, 1), cin, cout, (1, 1), Padding::Same, false)
}

impl SepBlock {
    fn load(
        src: &mut dyn ParamSource,
        id: &str,
        cin: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self, WeightError> {
        let padding = if stride == 2 { Padding::Valid } else { Padding::Same };
        let first = SeparableConv2d::load(
            src,
            &format!("separable_conv_1_{id}"),
            (kernel, kernel),
            cin,
            filters,
            (stride, stride),
            padding,
        )?;
        let first_bn = BatchNorm::load(src, &format!("separable_conv_1_bn_{id}"), filters, EPS, true)?;
        let second = SeparableConv2d::load(
            src,
            &format!("separable_conv_2_{id}"),
            (kernel, kernel),
            filters,
            filters,
            (1, 1),
            Padding::Same,
        )?;
        let second_bn = BatchNorm::load(src, &format!("separable_conv_2_bn_{id}"), filters, EPS, true)?;
        Ok(Self {
            first,
            first_bn,
            second,
            second_bn,
            kernel,
            stride,
        })
    }

    fn forward(&self, x: &Tensor3) -> Tensor3 {
        let mut y = relu(x);
        if self.stride == 2 {
            y = zero_pad(&y, Pads::correct(y.height(), y.width(), (self.kernel, self.kernel)));
        }
        let mut y = self.first.forward(&y);
        self.first_bn.forward_inplace(&mut y, Activation::Relu);
        let mut y = self.second.forward(&y);
        self.second_bn.forward_inplace(&mut y, Activation::Linear);
        y
    }
}

impl Adjust {
    fn load(
        src: &mut dyn ParamSource,
        prev: Option<Port>,
        input: Port,
        filters: usize,
        id: &str,
    ) -> Result<(Self, Port), WeightError> {
        let Some(p) = prev else {
            return Ok((Adjust::Identity, input));
        };
        let adjusted = Port {
            channels: filters,
            level: input.level,
        };
        if p.level != input.level {
            let half = filters / 2;
            let path1 = conv1x1(src, &format!("adjust_conv_1_{id}"), p.channels, half)?;
            let path2 = conv1x1(src, &format!("adjust_conv_2_{id}"), p.channels, half)?;
            let bn = BatchNorm::load(src, &format!("adjust_bn_{id}"), 2 * half, EPS, true)?;
            Ok((
                Adjust::Reduce { path1, path2, bn },
                Port {
                    channels: 2 * half,
                    level: input.level,
                },
            ))
        } else if p.channels != filters {
            let conv = conv1x1(src, &format!("adjust_conv_projection_{id}"), p.channels, filters)?;
            let bn = BatchNorm::load(src, &format!("adjust_bn_{id}"), filters, EPS, true)?;
            Ok((Adjust::Project { conv, bn }, adjusted))
        } else {
            Ok((Adjust::Identity, p))
        }
    }

    fn forward(&self, p: &Tensor3) -> Tensor3 {
        match self {
            Adjust::Identity => p.clone(),
            Adjust::Reduce { path1, path2, bn } => {
                let r = relu(p);
                let a = path1.forward(&avg_pool(&r, 1, 2, Padding::Valid));
                let shifted = crop(
                    &zero_pad(&r, Pads { top: 0, bottom: 1, left: 0, right: 1 }),
                    Pads { top: 1, bottom: 0, left: 1, right: 0 },
                );
                let b = path2.forward(&avg_pool(&shifted, 1, 2, Padding::Valid));
                bn.forward(&concat(&[&a, &b]), Activation::Linear)
            }
            Adjust::Project { conv, bn } => bn.forward(&conv.forward(&relu(p)), Activation::Linear),
        }
    }
}

impl NormalCell {
    fn load(
        src: &mut dyn ParamSource,
        input: Port,
        prev: Option<Port>,
        filters: usize,
        id: &str,
    ) -> Result<(Self, Port), WeightError> {
        let (adjust, p) = Adjust::load(src, prev, input, filters, id)?;
        let conv = conv1x1(src, &format!("normal_conv_1_{id}"), input.channels, filters)?;
        let bn = BatchNorm::load(src, &format!("normal_bn_1_{id}"), filters, EPS, true)?;
        let pc = p.channels;
        let cell = Self {
            adjust,
            conv,
            bn,
            left1: SepBlock::load(src, &format!("normal_left1_{id}"), filters, filters, 5, 1)?,
            right1: SepBlock::load(src, &format!("normal_right1_{id}"), pc, filters, 3, 1)?,
            left2: SepBlock::load(src, &format!("normal_left2_{id}"), pc, filters, 5, 1)?,
            right2: SepBlock::load(src, &format!("normal_right2_{id}"), pc, filters, 3, 1)?,
            left5: SepBlock::load(src, &format!("normal_left5_{id}"), filters, filters, 3, 1)?,
        };
        let out = Port {
            channels: pc + 5 * filters,
            level: input.level,
        };
        Ok((cell, out))
    }

    fn forward(&self, x: &Tensor3, p: &Tensor3) -> Tensor3 {
        let p = self.adjust.forward(p);
        let h = self.bn.forward(&self.conv.forward(&relu(x)), Activation::Linear);
        let mut x1 = self.left1.forward(&h);
        add_inplace(&mut x1, &self.right1.forward(&p));
        let mut x2 = self.left2.forward(&p);
        add_inplace(&mut x2, &self.right2.forward(&p));
        let x3 = add(&avg_pool(&h, 3, 1, Padding::Same), &p);
        let pooled = avg_pool(&p, 3, 1, Padding::Same);
        let x4 = add(&pooled, &pooled);
        let x5 = add(&self.left5.forward(&h), &h);
        concat(&[&p, &x1, &x2, &x3, &x4, &x5])
    }
}

impl ReductionCell {
    fn load(
        src: &mut dyn ParamSource,
        input: Port,
        prev: Option<Port>,
        filters: usize,
        id: &str,
    ) -> Result<(Self, Port), WeightError> {
        let (adjust, p) = Adjust::load(src, prev, input, filters, id)?;
        let conv = conv1x1(src, &format!("reduction_conv_1_{id}"), input.channels, filters)?;
        let bn = BatchNorm::load(src, &format!("reduction_bn_1_{id}"), filters, EPS, true)?;
        let pc = p.channels;
        let cell = Self {
            adjust,
            conv,
            bn,
            left1: SepBlock::load(src, &format!("reduction_left1_{id}"), filters, filters, 5, 2)?,
            right1: SepBlock::load(src, &format!("reduction_right1_{id}"), pc, filters, 7, 2)?,
            right2: SepBlock::load(src, &format!("reduction_right2_{id}"), pc, filters, 7, 2)?,
            right3: SepBlock::load(src, &format!("reduction_right3_{id}"), pc, filters, 5, 2)?,
            left4: SepBlock::load(src, &format!("reduction_left4_{id}"), filters, filters, 3, 1)?,
        };
        // Pooled branches carry `filters` channels, so every concatenated term does.
        let out = Port {
            channels: 4 * filters,
            level: input.level + 1,
        };
        Ok((cell, out))
    }

    fn forward(&self, x: &Tensor3, p: &Tensor3) -> Tensor3 {
        let p = self.adjust.forward(p);
        let h = self.bn.forward(&self.conv.forward(&relu(x)), Activation::Linear);
        let h3 = zero_pad(&h, Pads::correct(h.height(), h.width(), (3, 3)));
        let h3_max = max_pool(&h3, 3, 2, Padding::Valid);

        let mut x1 = self.left1.forward(&h);
        add_inplace(&mut x1, &self.right1.forward(&p));
        let mut x2 = h3_max.clone();
        add_inplace(&mut x2, &self.right2.forward(&p));
        let mut x3 = avg_pool(&h3, 3, 2, Padding::Valid);
        add_inplace(&mut x3, &self.right3.forward(&p));
        let x4 = add(&x2, &avg_pool(&x1, 3, 1, Padding::Same));
        let mut x5 = self.left4.forward(&x1);
        add_inplace(&mut x5, &h3_max);
        concat(&[&x2, &x3, &x4, &x5])
    }
}

impl NasNetMobile {
    pub fn load(src: &mut dyn ParamSource) -> Result<Self, WeightError> {
        let stem = conv_bn(
            src,
            "stem_conv1",
            "stem_bn1",
            (3, 3),
            3,
            32,
            2,
            Padding::Valid,
            false,
            BnParams::eps(EPS),
            Activation::Linear,
        )?;
        let mut cells = Vec::new();
        let mut x = Port { channels: 32, level: 0 };
        let mut p: Option<Port> = None;

        let reduce = |src: &mut dyn ParamSource, cells: &mut Vec<Cell>, x: &mut Port, p: &mut Option<Port>, filters, id: &str| {
            let (cell, out) = ReductionCell::load(src, *x, *p, filters, id)?;
            cells.push(Cell::Reduction(cell));
            *p = Some(*x);
            *x = out;
            Ok::<_, WeightError>(())
        };

        reduce(src, &mut cells, &mut x, &mut p, BASE_FILTERS / 4, "stem_1")?;
        reduce(src, &mut cells, &mut x, &mut p, BASE_FILTERS / 2, "stem_2")?;
        for stage in 0..3 {
            let filters = BASE_FILTERS << stage;
            if stage > 0 {
                let id = format!("reduce_{}", stage * CELLS_PER_STAGE);
                reduce(src, &mut cells, &mut x, &mut p, filters, &id)?;
            }
            for i in 0..CELLS_PER_STAGE {
                let id = (stage * CELLS_PER_STAGE + i + usize::from(stage > 0)).to_string();
                let (cell, out) = NormalCell::load(src, x, p, filters, &id)?;
                cells.push(Cell::Normal(cell));
                p = Some(x);
                x = out;
            }
        }
        debug_assert_eq!(x.channels, 1056);
        Ok(Self { stem, cells })
    }
}

impl Backbone for NasNetMobile {
    fn forward(&self, input: &Tensor3) -> Tensor3 {
        let mut x = self.stem.forward(input);
        let mut p: Option<Tensor3> = None;
        for cell in &self.cells {
            let prev = p.as_ref().unwrap_or(&x);
            let out = match cell {
                Cell::Normal(c) => c.forward(&x, prev),
                Cell::Reduction(c) => c.forward(&x, prev),
            };
            p = Some(std::mem::replace(&mut x, out));
        }
        Activation::Relu.apply_slice(x.data_mut());
        x
    }

    fn feature_width(&self) -> usize {
        1056
    }
}
