use super::layers::{conv_bn, BnParams};
use super::Backbone;
use crate::nn::{avg_pool, concat, max_pool, Activation, ConvUnit, Padding, ParamSource, WeightError};
use crate::tensor::Tensor3;

const BN: BnParams = BnParams {
    epsilon: 1e-3,
    has_gamma: false,
};

/// Inception v3 up to `mixed10`.
///
/// The reference implementation leaves its conv/BN layers unnamed, so they
/// receive session-order names (`conv2d`, `conv2d_1`, ...). Layers here are
/// created in exactly that order.
pub struct InceptionV3 {
    stem: Vec<StemStep>,
    blocks: Vec<Vec<Branch>>,
}

enum StemStep {
    Conv(ConvUnit),
    MaxPool,
}

enum Branch {
    Chain(Vec<ConvUnit>),
    /// 3x3 stride-1 "same" average pool, then a 1x1 conv.
    AvgPoolConv(ConvUnit),
    /// 3x3 stride-2 max pool.
    MaxPool,
    /// A shared chain feeding two parallel convs whose outputs are concatenated.
    Fork(Vec<ConvUnit>, ConvUnit, ConvUnit),
}

struct Builder<'a> {
    src: &'a mut dyn ParamSource,
    count: usize,
}

impl Builder<'_> {
    fn conv(
        &mut self,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Result<ConvUnit, WeightError> {
        let (conv_name, bn_name) = match self.count {
            0 => ("conv2d".to_string(), "batch_normalization".to_string()),
            n => (format!("conv2d_{n}"), format!("batch_normalization_{n}")),
        };
        self.count += 1;
        conv_bn(
            self.src,
            &conv_name,
            &bn_name,
            kernel,
            cin,
            cout,
            stride,
            padding,
            false,
            BN,
            Activation::Relu,
        )
    }

    fn same(&mut self, cin: usize, cout: usize, kernel: (usize, usize)) -> Result<ConvUnit, WeightError> {
        self.conv(cin, cout, kernel, 1, Padding::Same)
    }

    /// 1x1 followed by a sequence of `(filters, kernel)` convs.
    fn chain(&mut self, cin: usize, steps: &[(usize, (usize, usize))]) -> Result<Vec<ConvUnit>, WeightError> {
        let mut c = cin;
        let mut out = Vec::with_capacity(steps.len());
        for &(f, k) in steps {
            out.push(self.same(c, f, k)?);
            c = f;
        }
        Ok(out)
    }
}

impl InceptionV3 {
    pub fn load(src: &mut dyn ParamSource) -> Result<Self, WeightError> {
        let mut b = Builder { src, count: 0 };
        let stem = vec![
            StemStep::Conv(b.conv(3, 32, (3, 3), 2, Padding::Valid)?),
            StemStep::Conv(b.conv(32, 32, (3, 3), 1, Padding::Valid)?),
            StemStep::Conv(b.same(32, 64, (3, 3))?),
            StemStep::MaxPool,
            StemStep::Conv(b.conv(64, 80, (1, 1), 1, Padding::Valid)?),
            StemStep::Conv(b.conv(80, 192, (3, 3), 1, Padding::Valid)?),
            StemStep::MaxPool,
        ];

        let mut blocks = Vec::new();
        let mut c = 192;

        // mixed0..mixed2
        for pool_features in [32, 64, 64] {
            blocks.push(vec![
                Branch::Chain(b.chain(c, &[(64, (1, 1))])?),
                Branch::Chain(b.chain(c, &[(48, (1, 1)), (64, (5, 5))])?),
                Branch::Chain(b.chain(c, &[(64, (1, 1)), (96, (3, 3)), (96, (3, 3))])?),
                Branch::AvgPoolConv(b.same(c, pool_features, (1, 1))?),
            ]);
            c = 64 + 64 + 96 + pool_features;
        }

        // mixed3
        let wide = b.conv(c, 384, (3, 3), 2, Padding::Valid)?;
        let mut dbl = b.chain(c, &[(64, (1, 1)), (96, (3, 3))])?;
        dbl.push(b.conv(96, 96, (3, 3), 2, Padding::Valid)?);
        blocks.push(vec![Branch::Chain(vec![wide]), Branch::Chain(dbl), Branch::MaxPool]);
        c += 384 + 96;

        // mixed4..mixed7
        for mid in [128, 160, 160, 192] {
            blocks.push(vec![
                Branch::Chain(b.chain(c, &[(192, (1, 1))])?),
                Branch::Chain(b.chain(c, &[(mid, (1, 1)), (mid, (1, 7)), (192, (7, 1))])?),
                Branch::Chain(b.chain(
                    c,
                    &[
                        (mid, (1, 1)),
                        (mid, (7, 1)),
                        (mid, (1, 7)),
                        (mid, (7, 1)),
                        (192, (1, 7)),
                    ],
                )?),
                Branch::AvgPoolConv(b.same(c, 192, (1, 1))?),
            ]);
            c = 4 * 192;
        }

        // mixed8
        let mut narrow = b.chain(c, &[(192, (1, 1))])?;
        narrow.push(b.conv(192, 320, (3, 3), 2, Padding::Valid)?);
        let mut seven = b.chain(c, &[(192, (1, 1)), (192, (1, 7)), (192, (7, 1))])?;
        seven.push(b.conv(192, 192, (3, 3), 2, Padding::Valid)?);
        blocks.push(vec![Branch::Chain(narrow), Branch::Chain(seven), Branch::MaxPool]);
        c += 320 + 192;

        // mixed9, mixed10
        for _ in 0..2 {
            let single = b.chain(c, &[(320, (1, 1))])?;
            let split_stem = b.chain(c, &[(384, (1, 1))])?;
            let split = Branch::Fork(split_stem, b.same(384, 384, (1, 3))?, b.same(384, 384, (3, 1))?);
            let dbl_stem = b.chain(c, &[(448, (1, 1)), (384, (3, 3))])?;
            let dbl = Branch::Fork(dbl_stem, b.same(384, 384, (1, 3))?, b.same(384, 384, (3, 1))?);
            let pool = Branch::AvgPoolConv(b.same(c, 192, (1, 1))?);
            blocks.push(vec![Branch::Chain(single), split, dbl, pool]);
            c = 320 + 768 + 768 + 192;
        }
        debug_assert_eq!(c, 2048);
        Ok(Self { stem, blocks })
    }
}

fn run_chain(units: &[ConvUnit], x: &Tensor3) -> Tensor3 {
    let mut y = units[0].forward(x);
    for u in &units[1..] {
        y = u.forward(&y);
    }
    y
}

impl Backbone for InceptionV3 {
    fn forward(&self, x: &Tensor3) -> Tensor3 {
        let mut x = x.clone();
        for step in &self.stem {
            x = match step {
                StemStep::Conv(u) => u.forward(&x),
                StemStep::MaxPool => max_pool(&x, 3, 2, Padding::Valid),
            };
        }
        for block in &self.blocks {
            let outs: Vec<Tensor3> = block
                .iter()
                .map(|branch| match branch {
                    Branch::Chain(units) => run_chain(units, &x),
                    Branch::AvgPoolConv(u) => u.forward(&avg_pool(&x, 3, 1, Padding::Same)),
                    Branch::MaxPool => max_pool(&x, 3, 2, Padding::Valid),
                    Branch::Fork(stem, a, b) => {
                        let s = run_chain(stem, &x);
                        concat(&[&a.forward(&s), &b.forward(&s)])
                    }
                })
                .collect();
            let refs: Vec<&Tensor3> = outs.iter().collect();
            x = concat(&refs);
        }
        x
    }

    fn feature_width(&self) -> usize {
        2048
    }
}
