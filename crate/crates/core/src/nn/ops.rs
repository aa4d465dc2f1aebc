use super::Pads;
use crate::tensor::Tensor3;

pub fn zero_pad(x: &Tensor3, pads: Pads) -> Tensor3 {
    let (h, w, c) = x.shape();
    let oh = h + pads.top + pads.bottom;
    let ow = w + pads.left + pads.right;
    let mut out = Tensor3::zeros(oh, ow, c);
    for y in 0..h {
        let src = &x.data()[y * w * c..(y + 1) * w * c];
        let start = ((y + pads.top) * ow + pads.left) * c;
        out.data_mut()[start..start + w * c].copy_from_slice(src);
    }
    out
}

/// Removes `pads` rows/columns from each edge.
pub fn crop(x: &Tensor3, pads: Pads) -> Tensor3 {
    let (h, w, c) = x.shape();
    let oh = h - pads.top - pads.bottom;
    let ow = w - pads.left - pads.right;
    let mut out = Tensor3::zeros(oh, ow, c);
    for y in 0..oh {
        let start = ((y + pads.top) * w + pads.left) * c;
        out.data_mut()[y * ow * c..(y + 1) * ow * c].copy_from_slice(&x.data()[start..start + ow * c]);
    }
    out
}

/// Channel-axis concatenation.
pub fn concat(parts: &[&Tensor3]) -> Tensor3 {
    let (h, w, _) = parts[0].shape();
    assert!(
        parts.iter().all(|p| p.height() == h && p.width() == w),
        "concat spatial mismatch"
    );
    let total: usize = parts.iter().map(|p| p.channels()).sum();
    let mut data = Vec::with_capacity(h * w * total);
    for i in 0..h * w {
        for p in parts {
            let c = p.channels();
            data.extend_from_slice(&p.data()[i * c..(i + 1) * c]);
        }
    }
    Tensor3::from_vec(h, w, total, data)
}

pub fn add(a: &Tensor3, b: &Tensor3) -> Tensor3 {
    let mut out = a.clone();
    add_inplace(&mut out, b);
    out
}

pub fn add_inplace(a: &mut Tensor3, b: &Tensor3) {
    assert_eq!(a.shape(), b.shape(), "elementwise add shape mismatch");
    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
}

/// Multiplies every pixel by a per-channel gate.
pub fn scale_channels(x: &mut Tensor3, gate: &[f32]) {
    let c = x.channels();
    assert_eq!(gate.len(), c);
    for px in x.data_mut().chunks_exact_mut(c) {
        for (v, g) in px.iter_mut().zip(gate) {
            *v *= g;
        }
    }
}
