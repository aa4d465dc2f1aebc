use super::{resolve_padding, Padding};
use crate::tensor::Tensor3;

/// Max pooling; padded cells never win under `"same"` padding.
pub fn max_pool(x: &Tensor3, window: usize, stride: usize, padding: Padding) -> Tensor3 {
    pool(x, window, stride, padding, PoolKind::Max)
}

/// Average pooling; under `"same"` padding only in-bounds cells are counted.
pub fn avg_pool(x: &Tensor3, window: usize, stride: usize, padding: Padding) -> Tensor3 {
    pool(x, window, stride, padding, PoolKind::Avg)
}

pub fn global_average_pool(x: &Tensor3) -> Vec<f32> {
    x.global_average()
}

#[derive(Clone, Copy, PartialEq)]
enum PoolKind {
    Max,
    Avg,
}

fn pool(x: &Tensor3, window: usize, stride: usize, padding: Padding, kind: PoolKind) -> Tensor3 {
    let (h, w, c) = x.shape();
    let (pads, oh, ow) = resolve_padding(h, w, (window, window), (stride, stride), padding);
    let mut out = Tensor3::zeros(oh, ow, c);
    let init = match kind {
        PoolKind::Max => f32::NEG_INFINITY,
        PoolKind::Avg => 0.0,
    };
    let data = out.data_mut();
    for oy in 0..oh {
        let y0 = (oy * stride) as isize - pads.top as isize;
        let ys = y0.max(0) as usize..((y0 + window as isize).min(h as isize)) as usize;
        for ox in 0..ow {
            let x0 = (ox * stride) as isize - pads.left as isize;
            let xs = x0.max(0) as usize..((x0 + window as isize).min(w as isize)) as usize;
            let acc = &mut data[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
            acc.fill(init);
            let mut count = 0usize;
            for iy in ys.clone() {
                for ix in xs.clone() {
                    count += 1;
                    let px = x.pixel(iy, ix);
                    match kind {
                        PoolKind::Max => {
                            for (a, &v) in acc.iter_mut().zip(px) {
                                *a = a.max(v);
                            }
                        }
                        PoolKind::Avg => {
                            for (a, &v) in acc.iter_mut().zip(px) {
                                *a += v;
                            }
                        }
                    }
                }
            }
            if kind == PoolKind::Avg {
                let inv = 1.0 / count.max(1) as f32;
                for a in acc.iter_mut() {
                    *a *= inv;
                }
            }
        }
    }
    out
}
