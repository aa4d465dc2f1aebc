use super::Backbone;
use crate::nn::{max_pool, Activation, Conv2d, ConvUnit, Padding, ParamSource, WeightError};
use crate::tensor::Tensor3;

/// VGG-16/19 convolutional trunk, ending with `block5_pool`.
pub struct Vgg {
    blocks: Vec<Vec<ConvUnit>>,
}

impl Vgg {
    pub fn load(src: &mut dyn ParamSource, convs_per_block: &[usize; 5]) -> Result<Self, WeightError> {
        let mut cin = 3;
        let mut blocks = Vec::new();
        for (b, (&n, filters)) in convs_per_block.iter().zip([64usize, 128, 256, 512, 512]).enumerate() {
            let mut units = Vec::with_capacity(n);
            for i in 1..=n {
                let conv = Conv2d::load(
                    src,
                    &format!("block{}_conv{}", b + 1, i),
                    (3, 3),
                    cin,
                    filters,
                    (1, 1),
                    Padding::Same,
                    true,
                )?;
                units.push(ConvUnit::new(conv, None, Activation::Relu));
                cin = filters;
            }
            blocks.push(units);
        }
        Ok(Self { blocks })
    }
}

impl Backbone for Vgg {
    fn forward(&self, x: &Tensor3) -> Tensor3 {
        let mut x = x.clone();
        for block in &self.blocks {
            for unit in block {
                x = unit.forward(&x);
            }
            x = max_pool(&x, 2, 2, Padding::Valid);
        }
        x
    }

    fn feature_width(&self) -> usize {
        512
    }
}
