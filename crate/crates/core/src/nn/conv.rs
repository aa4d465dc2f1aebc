use super::weights::{ParamRole, ParamSource, WeightError};
use super::{resolve_padding, Activation, Padding, Pads};
use crate::tensor::Tensor3;

/// Upper bound on the im2col scratch buffer, in elements.
const IM2COL_BUDGET: usize = 1 << 21;

/// Dense 2-D convolution with an `KH × KW × C_in × C_out` kernel.
#[derive(Clone, Debug)]
pub struct Conv2d {
    kernel: Vec<f32>,
    bias: Option<Vec<f32>>,
    kh: usize,
    kw: usize,
    cin: usize,
    cout: usize,
    stride: (usize, usize),
    padding: Padding,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn load(
        src: &mut dyn ParamSource,
        name: &str,
        kernel: (usize, usize),
        cin: usize,
        cout: usize,
        stride: (usize, usize),
        padding: Padding,
        use_bias: bool,
    ) -> Result<Self, WeightError> {
        let (kh, kw) = kernel;
        let weights = src.fetch(
            &format!("{name}/kernel"),
            &[kh, kw, cin, cout],
            ParamRole::Kernel { fan_in: kh * kw * cin },
        )?;
        let bias = if use_bias {
            Some(src.fetch(&format!("{name}/bias"), &[cout], ParamRole::Bias)?)
        } else {
            None
        };
        Ok(Self {
            kernel: weights,
            bias,
            kh,
            kw,
            cin,
            cout,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.cout
    }

    pub fn forward(&self, x: &Tensor3) -> Tensor3 {
        assert_eq!(x.channels(), self.cin, "conv input channel mismatch");
        let mut out = conv2d_raw(
            x,
            &self.kernel,
            (self.kh, self.kw),
            self.cout,
            self.stride,
            self.padding,
        );
        if let Some(bias) = &self.bias {
            for px in out.data_mut().chunks_exact_mut(self.cout) {
                for (v, b) in px.iter_mut().zip(bias) {
                    *v += b;
                }
            }
        }
        out
    }

    fn take_bias(&mut self) -> Option<Vec<f32>> {
        self.bias.take()
    }
}

/// Convolution via im2col + SGEMM. The kernel is read as a `(KH·KW·C_in) × C_out`
/// row-major matrix, which is exactly its `HWIO` memory layout.
pub(crate) fn conv2d_raw(
    x: &Tensor3,
    kernel: &[f32],
    (kh, kw): (usize, usize),
    cout: usize,
    stride: (usize, usize),
    padding: Padding,
) -> Tensor3 {
    let (h, w, cin) = x.shape();
    assert_eq!(kernel.len(), kh * kw * cin * cout, "kernel does not match input channels");
    let (pads, oh, ow) = resolve_padding(h, w, (kh, kw), stride, padding);
    let mut out = Tensor3::zeros(oh, ow, cout);
    let k = kh * kw * cin;
    let pixels = oh * ow;

    if kh == 1 && kw == 1 && stride == (1, 1) && pads == Pads::ZERO {
        sgemm(pixels, k, cout, x.data(), kernel, out.data_mut());
        return out;
    }

    let rows_per_chunk = (IM2COL_BUDGET / k.max(1)).clamp(1, pixels.max(1));
    let mut cols = vec![0.0f32; rows_per_chunk * k];
    let mut start = 0;
    while start < pixels {
        let end = (start + rows_per_chunk).min(pixels);
        let rows = end - start;
        for (r, p) in (start..end).enumerate() {
            let oy = p / ow;
            let ox = p % ow;
            let row = &mut cols[r * k..(r + 1) * k];
            for ky in 0..kh {
                let iy = (oy * stride.0 + ky) as isize - pads.top as isize;
                for kx in 0..kw {
                    let ix = (ox * stride.1 + kx) as isize - pads.left as isize;
                    let dst = &mut row[(ky * kw + kx) * cin..(ky * kw + kx + 1) * cin];
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                        dst.fill(0.0);
                    } else {
                        dst.copy_from_slice(x.pixel(iy as usize, ix as usize));
                    }
                }
            }
        }
        sgemm(
            rows,
            k,
            cout,
            &cols[..rows * k],
            kernel,
            &mut out.data_mut()[start * cout..end * cout],
        );
        start = end;
    }
    out
}

/// `c = a · b` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
fn sgemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above guarantee every strided access stays in bounds.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Per-channel convolution with depth multiplier 1.
#[derive(Clone, Debug)]
pub struct DepthwiseConv2d {
    kernel: Vec<f32>,
    kh: usize,
    kw: usize,
    channels: usize,
    stride: (usize, usize),
    padding: Padding,
}

impl DepthwiseConv2d {
    pub fn load(
        src: &mut dyn ParamSource,
        weight_name: &str,
        kernel: (usize, usize),
        channels: usize,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self, WeightError> {
        let (kh, kw) = kernel;
        let weights = src.fetch(
            weight_name,
            &[kh, kw, channels, 1],
            ParamRole::Kernel { fan_in: kh * kw },
        )?;
        Ok(Self {
            kernel: weights,
            kh,
            kw,
            channels,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor3) -> Tensor3 {
        let (h, w, c) = x.shape();
        assert_eq!(c, self.channels, "depthwise channel mismatch");
        let (pads, oh, ow) = resolve_padding(h, w, (self.kh, self.kw), self.stride, self.padding);
        let mut out = Tensor3::zeros(oh, ow, c);
        let data = out.data_mut();
        for oy in 0..oh {
            for ox in 0..ow {
                let acc = &mut data[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
                for ky in 0..self.kh {
                    let iy = (oy * self.stride.0 + ky) as isize - pads.top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let ix = (ox * self.stride.1 + kx) as isize - pads.left as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let input = x.pixel(iy as usize, ix as usize);
                        let taps = &self.kernel[(ky * self.kw + kx) * c..(ky * self.kw + kx + 1) * c];
                        for ((a, &v), &t) in acc.iter_mut().zip(input).zip(taps) {
                            *a += v * t;
                        }
                    }
                }
            }
        }
        out
    }
}

/// Depthwise convolution followed by a bias-free pointwise projection.
#[derive(Clone, Debug)]
pub struct SeparableConv2d {
    depthwise: DepthwiseConv2d,
    pointwise: Vec<f32>,
    cout: usize,
}

impl SeparableConv2d {
    pub fn load(
        src: &mut dyn ParamSource,
        name: &str,
        kernel: (usize, usize),
        cin: usize,
        cout: usize,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self, WeightError> {
        let depthwise = DepthwiseConv2d::load(
            src,
            &format!("{name}/depthwise_kernel"),
            kernel,
            cin,
            stride,
            padding,
        )?;
        let pointwise = src.fetch(
            &format!("{name}/pointwise_kernel"),
            &[1, 1, cin, cout],
            ParamRole::Kernel { fan_in: cin },
        )?;
        Ok(Self {
            depthwise,
            pointwise,
            cout,
        })
    }

    pub fn forward(&self, x: &Tensor3) -> Tensor3 {
        let d = self.depthwise.forward(x);
        conv2d_raw(&d, &self.pointwise, (1, 1), self.cout, (1, 1), Padding::Valid)
    }
}

/// Inference-mode batch normalization reduced to a per-channel affine map.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    scale: Vec<f32>,
    shift: Vec<f32>,
}

impl BatchNorm {
    /// Loads `gamma` (when `has_gamma`), `beta`, `moving_mean` and
    /// `moving_variance` under `name`.
    pub fn load(
        src: &mut dyn ParamSource,
        name: &str,
        channels: usize,
        epsilon: f32,
        has_gamma: bool,
    ) -> Result<Self, WeightError> {
        let gamma = if has_gamma {
            src.fetch(&format!("{name}/gamma"), &[channels], ParamRole::Gamma)?
        } else {
            vec![1.0; channels]
        };
        let beta = src.fetch(&format!("{name}/beta"), &[channels], ParamRole::Beta)?;
        let mean = src.fetch(&format!("{name}/moving_mean"), &[channels], ParamRole::MovingMean)?;
        let var = src.fetch(
            &format!("{name}/moving_variance"),
            &[channels],
            ParamRole::MovingVariance,
        )?;
        let scale: Vec<f32> = gamma
            .iter()
            .zip(&var)
            .map(|(g, v)| g / (v + epsilon).sqrt())
            .collect();
        let shift = beta
            .iter()
            .zip(&mean)
            .zip(&scale)
            .map(|((b, m), s)| b - m * s)
            .collect();
        Ok(Self { scale, shift })
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn forward_inplace(&self, x: &mut Tensor3, act: Activation) {
        let c = self.scale.len();
        assert_eq!(x.channels(), c, "batch norm channel mismatch");
        for px in x.data_mut().chunks_exact_mut(c) {
            for ((v, s), t) in px.iter_mut().zip(&self.scale).zip(&self.shift) {
                *v = act.apply(*v * s + t);
            }
        }
    }

    pub fn forward(&self, x: &Tensor3, act: Activation) -> Tensor3 {
        let mut y = x.clone();
        self.forward_inplace(&mut y, act);
        y
    }

    fn absorb_bias(&mut self, bias: &[f32]) {
        for ((t, s), b) in self.shift.iter_mut().zip(&self.scale).zip(bias) {
            *t += b * s;
        }
    }
}

/// Convolution, optional batch normalization and an activation in one pass.
#[derive(Clone, Debug)]
pub struct ConvUnit {
    conv: Conv2d,
    bn: Option<BatchNorm>,
    act: Activation,
}

impl ConvUnit {
    pub fn new(mut conv: Conv2d, mut bn: Option<BatchNorm>, act: Activation) -> Self {
        if let Some(bn) = bn.as_mut() {
            if let Some(bias) = conv.take_bias() {
                bn.absorb_bias(&bias);
            }
        }
        Self { conv, bn, act }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }

    pub fn forward(&self, x: &Tensor3) -> Tensor3 {
        let mut y = self.conv.forward(x);
        match &self.bn {
            Some(bn) => bn.forward_inplace(&mut y, self.act),
            None => self.act.apply_slice(y.data_mut()),
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::weights::{SurrogateSource, WeightStore};

    /// Direct seven-loop convolution used as the reference.
    fn naive_conv(
        x: &Tensor3,
        kernel: &[f32],
        (kh, kw): (usize, usize),
        cout: usize,
        stride: (usize, usize),
        padding: Padding,
    ) -> Tensor3 {
        let (h, w, cin) = x.shape();
        let (pads, oh, ow) = resolve_padding(h, w, (kh, kw), stride, padding);
        Tensor3::from_fn(oh, ow, cout, |oy, ox, co| {
            let mut acc = 0.0f64;
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = (oy * stride.0 + ky) as isize - pads.top as isize;
                    let ix = (ox * stride.1 + kx) as isize - pads.left as isize;
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                        continue;
                    }
                    for ci in 0..cin {
                        let kv = kernel[((ky * kw + kx) * cin + ci) * cout + co];
                        acc += (x.get(iy as usize, ix as usize, ci) * kv) as f64;
                    }
                }
            }
            acc as f32
        })
    }

    fn ramp(h: usize, w: usize, c: usize) -> Tensor3 {
        Tensor3::from_fn(h, w, c, |y, x, ch| ((y * 7 + x * 3 + ch * 5) % 11) as f32 / 11.0 - 0.4)
    }

    #[test]
    fn im2col_matches_naive_across_strides_and_padding() {
        let x = ramp(9, 8, 5);
        for &(k, stride, padding) in &[
            ((3, 3), (1, 1), Padding::Same),
            ((3, 3), (2, 2), Padding::Same),
            ((3, 3), (2, 2), Padding::Valid),
            ((1, 7), (1, 1), Padding::Same),
            ((7, 1), (1, 1), Padding::Same),
            ((1, 1), (2, 2), Padding::Valid),
            ((1, 1), (1, 1), Padding::Valid),
            ((5, 5), (2, 2), Padding::Same),
        ] {
            let cout = 4;
            let kernel: Vec<f32> = (0..k.0 * k.1 * 5 * cout)
                .map(|i| ((i * 13) % 17) as f32 / 17.0 - 0.5)
                .collect();
            let fast = conv2d_raw(&x, &kernel, k, cout, stride, padding);
            let slow = naive_conv(&x, &kernel, k, cout, stride, padding);
            assert_eq!(fast.shape(), slow.shape());
            assert!(fast.max_abs_diff(&slow) < 1e-5, "{k:?} {stride:?} {padding:?}");
        }
    }

    #[test]
    fn depthwise_matches_per_channel_naive() {
        let x = ramp(7, 6, 3);
        let mut src = SurrogateSource::new(3);
        let dw = DepthwiseConv2d::load(&mut src, "dw/kernel", (3, 3), 3, (2, 2), Padding::Same).unwrap();
        let y = dw.forward(&x);
        let store: WeightStore = src.into_store();
        let (_, k) = store.f32_tensor("dw/kernel").unwrap();
        for c in 0..3 {
            let xc = Tensor3::from_fn(7, 6, 1, |a, b, _| x.get(a, b, c));
            let kc: Vec<f32> = (0..9).map(|t| k[t * 3 + c]).collect();
            let yc = naive_conv(&xc, &kc, (3, 3), 1, (2, 2), Padding::Same);
            for yy in 0..y.height() {
                for xx in 0..y.width() {
                    assert!((y.get(yy, xx, c) - yc.get(yy, xx, 0)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn bias_folds_into_batch_norm() {
        let x = ramp(4, 4, 2);
        let mut src = SurrogateSource::new(11);
        let conv = Conv2d::load(&mut src, "c", (3, 3), 2, 3, (1, 1), Padding::Same, true).unwrap();
        let bn = BatchNorm::load(&mut src, "bn", 3, 1e-3, true).unwrap();
        let unfused = bn.forward(&conv.forward(&x), Activation::Relu);
        let fused = ConvUnit::new(conv, Some(bn), Activation::Relu).forward(&x);
        assert!(fused.max_abs_diff(&unfused) < 1e-5);
    }
}
