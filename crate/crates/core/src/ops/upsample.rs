//! Bilinear upsampling, half-pixel (align-corners = false) convention.

use crate::scalar::Scalar;

/// Source taps for one output coordinate: `(i0, i1, frac)`.
pub(crate) fn taps(dst: usize, factor: usize, len: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    let frac = if i0 == len - 1 { 0.0 } else { src - i0 as f64 };
    (i0, i1, frac)
}

pub(crate) fn forward<T: Scalar>(planes: usize, h: usize, w: usize, f: usize, x: &[T]) -> Vec<T> {
    let (ho, wo) = (h * f, w * f);
    let rows: Vec<_> = (0..ho).map(|o| taps(o, f, h)).collect();
    let cols: Vec<_> = (0..wo).map(|o| taps(o, f, w)).collect();
    let mut out = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for &(r0, r1, fr) in &rows {
            let (fr, gr) = (T::lit(fr), T::lit(1.0 - fr));
            for &(c0, c1, fc) in &cols {
                let (fc, gc) = (T::lit(fc), T::lit(1.0 - fc));
                let top = src[r0 * w + c0] * gc + src[r0 * w + c1] * fc;
                let bot = src[r1 * w + c0] * gc + src[r1 * w + c1] * fc;
                out.push(top * gr + bot * fr);
            }
        }
    }
    out
}

pub(crate) fn backward<T: Scalar>(planes: usize, h: usize, w: usize, f: usize, dy: &[T]) -> Vec<T> {
    let (ho, wo) = (h * f, w * f);
    let rows: Vec<_> = (0..ho).map(|o| taps(o, f, h)).collect();
    let cols: Vec<_> = (0..wo).map(|o| taps(o, f, w)).collect();
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        let g = &dy[p * ho * wo..(p + 1) * ho * wo];
        for (oy, &(r0, r1, fr)) in rows.iter().enumerate() {
            let (fr, gr) = (T::lit(fr), T::lit(1.0 - fr));
            for (ox, &(c0, c1, fc)) in cols.iter().enumerate() {
                let (fc, gc) = (T::lit(fc), T::lit(1.0 - fc));
                let v = g[oy * wo + ox];
                dst[r0 * w + c0] += v * gr * gc;
                dst[r0 * w + c1] += v * gr * fc;
                dst[r1 * w + c0] += v * fr * gc;
                dst[r1 * w + c1] += v * fr * fc;
            }
        }
    }
    dx
}
