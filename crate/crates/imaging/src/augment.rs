//! Joint image/mask augmentation: rotation, shear, horizontal flip,
//! brightness and contrast.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::volume::{GrayscaleSlice, LabelMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub rotation_deg: f64,
    pub shear_deg: f64,
    /// Relative brightness and contrast range.
    pub intensity: f64,
    pub hflip: bool,
    /// Independent application probability of each transform.
    pub probability: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self { rotation_deg: 20.0, shear_deg: 2.0, intensity: 0.2, hflip: true, probability: 0.5 }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(invalid("augmentation", format!("probability {} outside [0, 1]", self.probability)));
        }
        if self.rotation_deg < 0.0 || self.shear_deg < 0.0 || self.intensity < 0.0 {
            return Err(invalid("augmentation", "ranges must be non-negative"));
        }
        Ok(())
    }
}

/// One sampled transform.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentParams {
    pub angle_deg: f64,
    pub shear_deg: f64,
    pub flip: bool,
    pub contrast: f64,
    pub brightness: f64,
}

impl AugmentParams {
    pub fn is_geometric(&self) -> bool {
        self.angle_deg != 0.0 || self.shear_deg != 0.0 || self.flip
    }
}

pub fn sample_params(spec: &AugmentationSpec, rng: &mut impl Rng) -> AugmentParams {
    let mut p = AugmentParams::default();
    let symmetric = |rng: &mut dyn rand::RngCore, r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
    if rng.gen_bool(spec.probability) {
        p.angle_deg = symmetric(rng, spec.rotation_deg);
    }
    if rng.gen_bool(spec.probability) {
        p.shear_deg = symmetric(rng, spec.shear_deg);
    }
    if spec.hflip && rng.gen_bool(spec.probability) {
        p.flip = true;
    }
    if rng.gen_bool(spec.probability) {
        p.brightness = symmetric(rng, spec.intensity);
        p.contrast = symmetric(rng, spec.intensity);
    }
    p
}

/// Output pixel centre to source coordinates: undo rotation and shear about
/// the image centre, then the flip.
fn source_map(p: &AugmentParams, w: usize, h: usize) -> impl Fn(usize, usize) -> (f64, f64) {
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = p.angle_deg.to_radians().sin_cos();
    let k = p.shear_deg.to_radians().tan();
    // forward: M = R * Sh with Sh = [[1, k], [0, 1]]; inverse = Sh^-1 * R^T
    let flip = p.flip;
    move |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let (rx, ry) = (c * dx + s * dy, -s * dx + c * dy);
        let (ux, uy) = (rx - k * ry, ry);
        let sx = ux + cx;
        let sx = if flip { w as f64 - 1.0 - sx } else { sx };
        (sx, uy + cy)
    }
}

fn sample_bilinear(src: &[f32], w: usize, h: usize, x: f64, y: f64) -> f32 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let at = |xx: f64, yy: f64| -> f64 {
        if xx < 0.0 || yy < 0.0 || xx >= w as f64 || yy >= h as f64 {
            0.0
        } else {
            src[yy as usize * w + xx as usize] as f64
        }
    };
    if fx == 0.0 && fy == 0.0 {
        return at(x0, y0) as f32;
    }
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx;
    let bot = at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx;
    (top * (1.0 - fy) + bot * fy) as f32
}

fn sample_nearest(src: &[u8], w: usize, h: usize, x: f64, y: f64) -> u8 {
    let (xr, yr) = (x.round(), y.round());
    if xr < 0.0 || yr < 0.0 || xr >= w as f64 || yr >= h as f64 {
        0
    } else {
        src[yr as usize * w + xr as usize]
    }
}

/// Apply one sampled transform. Geometry is shared by image (bilinear) and
/// mask (nearest), filling with 0; intensity changes touch the image only:
/// `p' = p * (1 + contrast) + brightness * (max - min)`.
pub fn apply(params: &AugmentParams, image: &GrayscaleSlice, mask: &LabelMask) -> Result<(GrayscaleSlice, LabelMask)> {
    let (w, h) = (image.width, image.height);
    if (w, h) != (mask.width, mask.height) {
        return Err(shape("augment", format!("image {w}x{h} vs mask {}x{}", mask.width, mask.height)));
    }
    let (mut pixels, labels) = if params.is_geometric() {
        let map = source_map(params, w, h);
        let mut px = Vec::with_capacity(w * h);
        let mut lb = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = map(x, y);
                px.push(sample_bilinear(&image.pixels, w, h, sx, sy));
                lb.push(sample_nearest(&mask.labels, w, h, sx, sy));
            }
        }
        (px, lb)
    } else {
        (image.pixels.clone(), mask.labels.clone())
    };
    if params.contrast != 0.0 || params.brightness != 0.0 {
        let (lo, hi) = image.pixels.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &p| (a.min(p), b.max(p)));
        let range = if hi > lo { (hi - lo) as f64 } else { 1.0 };
        let shift = params.brightness * range;
        pixels.iter_mut().for_each(|p| *p = (*p as f64 * (1.0 + params.contrast) + shift) as f32);
    }
    Ok((
        GrayscaleSlice { pixels, normalized: false, ..image.clone() },
        LabelMask { width: w, height: h, labels },
    ))
}

pub fn augment(image: &GrayscaleSlice, mask: &LabelMask, spec: &AugmentationSpec, rng: &mut impl Rng) -> Result<(GrayscaleSlice, LabelMask)> {
    spec.validate()?;
    if (image.width, image.height) != (mask.width, mask.height) {
        return Err(shape("augment", format!("image {}x{} vs mask {}x{}", image.width, image.height, mask.width, mask.height)));
    }
    let params = sample_params(spec, rng);
    apply(&params, image, mask)
}
