//! Slice normalization and resizing.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::volume::{GrayscaleSlice, LabelMask};

pub const STDEV_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Bilinear,
    Nearest,
}

/// `(p - mean) / max(stdev, 1e-8)` with the population stdev; constant
/// slices become all zeros.
pub fn normalize_pixels(pixels: &[f32]) -> Vec<f32> {
    let first = pixels.first().copied().unwrap_or(0.0);
    if pixels.iter().all(|&p| p == first) {
        return vec![0.0; pixels.len()];
    }
    let n = pixels.len() as f64;
    let mean = pixels.iter().map(|&p| p as f64).sum::<f64>() / n;
    let var = pixels.iter().map(|&p| (p as f64 - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(STDEV_FLOOR);
    pixels.iter().map(|&p| ((p as f64 - mean) / sd) as f32).collect()
}

pub fn normalize_slice(s: &GrayscaleSlice) -> GrayscaleSlice {
    GrayscaleSlice { pixels: normalize_pixels(&s.pixels), normalized: true, ..s.clone() }
}

#[inline]
pub(crate) fn nearest_index(dst: usize, src_len: usize, dst_len: usize) -> usize {
    (((2 * dst + 1) * src_len) / (2 * dst_len)).min(src_len - 1)
}

#[inline]
fn bilinear_taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, src - i0 as f64)
}

pub fn resize_plane_bilinear(src: &[f32], w: usize, h: usize, tw: usize, th: usize) -> Vec<f32> {
    if (w, h) == (tw, th) {
        return src.to_vec();
    }
    let cols: Vec<_> = (0..tw).map(|x| bilinear_taps(x, w, tw)).collect();
    let mut out = Vec::with_capacity(tw * th);
    for y in 0..th {
        let (y0, y1, fy) = bilinear_taps(y, h, th);
        for &(x0, x1, fx) in &cols {
            let p = |yy: usize, xx: usize| src[yy * w + xx] as f64;
            let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
            let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
            out.push((top * (1.0 - fy) + bot * fy) as f32);
        }
    }
    out
}

pub fn resize_plane_nearest<V: Copy>(src: &[V], w: usize, h: usize, tw: usize, th: usize) -> Vec<V> {
    let cols: Vec<usize> = (0..tw).map(|x| nearest_index(x, w, tw)).collect();
    let mut out = Vec::with_capacity(tw * th);
    for y in 0..th {
        let sy = nearest_index(y, h, th);
        out.extend(cols.iter().map(|&sx| src[sy * w + sx]));
    }
    out
}

fn check_target(tw: usize, th: usize) -> Result<()> {
    if tw == 0 || th == 0 {
        return Err(invalid("resize", format!("target {tw}x{th} must have extents >= 1")));
    }
    Ok(())
}

pub fn resize_image(s: &GrayscaleSlice, tw: usize, th: usize, interp: Interp) -> Result<GrayscaleSlice> {
    check_target(tw, th)?;
    let pixels = match interp {
        Interp::Bilinear => resize_plane_bilinear(&s.pixels, s.width, s.height, tw, th),
        Interp::Nearest => resize_plane_nearest(&s.pixels, s.width, s.height, tw, th),
    };
    Ok(GrayscaleSlice { width: tw, height: th, pixels, ..s.clone() })
}

/// Nearest-neighbour only: interpolating labels would invent classes.
pub fn resize_mask(m: &LabelMask, tw: usize, th: usize, interp: Interp) -> Result<LabelMask> {
    check_target(tw, th)?;
    if interp == Interp::Bilinear {
        return Err(invalid("resize", "bilinear interpolation of a label mask would invent labels; use nearest"));
    }
    Ok(LabelMask { width: tw, height: th, labels: resize_plane_nearest(&m.labels, m.width, m.height, tw, th) })
}
