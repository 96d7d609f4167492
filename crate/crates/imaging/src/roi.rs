//! Padded per-class 3D boxes and ROI patch extraction.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::resample::{normalize_pixels, resize_plane_bilinear, resize_plane_nearest};
use crate::volume::{extract_planes, slice_dims, GrayscaleSlice, LabelMask, LabelVolume, Provenance, Volume};

pub const DEFAULT_PAD: usize = 40;
pub const DEFAULT_TARGET: (usize, usize) = (96, 96);

/// Inclusive voxel bounds per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox3D {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BBox3D {
    pub fn extent(&self, axis: usize) -> usize {
        self.max[axis] - self.min[axis] + 1
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    pub fn within(&self, dims: [usize; 3]) -> bool {
        (0..3).all(|a| self.min[a] <= self.max[a] && self.max[a] < dims[a])
    }

    pub fn full(dims: [usize; 3]) -> Self {
        Self { min: [0; 3], max: dims.map(|d| d - 1) }
    }
}

/// Tightest box around every voxel equal to `class`, or `None` when absent.
pub fn class_bbox(vol: &LabelVolume, class: u8) -> Option<BBox3D> {
    let [nx, ny, _] = vol.dims;
    let mut min = [usize::MAX; 3];
    let mut max = [0usize; 3];
    let mut found = false;
    for (i, &v) in vol.data.iter().enumerate() {
        if v == class {
            let p = [i % nx, (i / nx) % ny, i / (nx * ny)];
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
            found = true;
        }
    }
    found.then_some(BBox3D { min, max })
}

/// Box of the largest 6-connected component of `class`; ties go to the
/// component found first in storage order.
pub fn largest_component_bbox(vol: &LabelVolume, class: u8) -> Option<BBox3D> {
    let [nx, ny, nz] = vol.dims;
    let mut seen = vec![false; vol.data.len()];
    let mut best: Option<(usize, BBox3D)> = None;
    let mut stack = Vec::new();
    for start in 0..vol.data.len() {
        if seen[start] || vol.data[start] != class {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        let mut b = BBox3D { min: [usize::MAX; 3], max: [0; 3] };
        while let Some(i) = stack.pop() {
            size += 1;
            let p = [i % nx, (i / nx) % ny, i / (nx * ny)];
            for a in 0..3 {
                b.min[a] = b.min[a].min(p[a]);
                b.max[a] = b.max[a].max(p[a]);
            }
            let mut visit = |j: usize| {
                if !seen[j] && vol.data[j] == class {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if p[0] > 0 {
                visit(i - 1);
            }
            if p[0] + 1 < nx {
                visit(i + 1);
            }
            if p[1] > 0 {
                visit(i - nx);
            }
            if p[1] + 1 < ny {
                visit(i + nx);
            }
            if p[2] > 0 {
                visit(i - nx * ny);
            }
            if p[2] + 1 < nz {
                visit(i + nx * ny);
            }
        }
        if best.map_or(true, |(n, _)| size > n) {
            best = Some((size, b));
        }
    }
    best.map(|(_, b)| b)
}

/// Grow every face by `pad` voxels, clamped to the volume.
pub fn pad_bbox(b: &BBox3D, pad: usize, dims: [usize; 3]) -> BBox3D {
    let mut out = *b;
    for a in 0..3 {
        out.min[a] = b.min[a].saturating_sub(pad);
        out.max[a] = (b.max[a] + pad).min(dims[a] - 1);
    }
    out
}

pub fn crop<V: Copy>(vol: &Volume<V>, b: &BBox3D) -> Result<Volume<V>> {
    if !b.within(vol.dims) {
        return Err(invalid("crop", format!("{b:?} outside volume {:?}", vol.dims)));
    }
    let dims = [b.extent(0), b.extent(1), b.extent(2)];
    let mut data = Vec::with_capacity(dims.iter().product());
    for z in b.min[2]..=b.max[2] {
        for y in b.min[1]..=b.max[1] {
            let start = vol.index(b.min[0], y, z);
            data.extend_from_slice(&vol.data[start..start + dims[0]]);
        }
    }
    Ok(Volume { dims, data })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiPatchSet {
    pub class: u8,
    pub bbox: BBox3D,
    pub axis: usize,
    /// Normalized intensity patches, one per slice of the box along `axis`.
    pub patches: Vec<GrayscaleSlice>,
    /// Binary (0/1) masks paired with `patches`.
    pub masks: Vec<LabelMask>,
    pub target: (usize, usize),
}

/// Crop, binarize, reslice along `axis`, normalize each patch and resize to
/// `target` (bilinear intensity, nearest mask).
pub fn extract_roi(
    intensity: &Volume<f32>,
    gt: &LabelVolume,
    b: &BBox3D,
    class: u8,
    target: (usize, usize),
    axis: usize,
    patient: &str,
) -> Result<RoiPatchSet> {
    if intensity.dims != gt.dims {
        return Err(shape("extract roi", format!("intensity {:?} vs labels {:?}", intensity.dims, gt.dims)));
    }
    if target.0 == 0 || target.1 == 0 {
        return Err(invalid("extract roi", "target extents must be >= 1"));
    }
    let img = crop(intensity, b)?;
    let lab = crop(gt, b)?;
    let bin = Volume { dims: lab.dims, data: lab.data.iter().map(|&v| (v == class) as u8).collect() };
    let (w, h) = slice_dims(img.dims, axis);
    let (tw, th) = target;
    let mut patches = Vec::new();
    let mut masks = Vec::new();
    for (s, (plane, mplane)) in extract_planes(&img, axis)?.into_iter().zip(extract_planes(&bin, axis)?).enumerate() {
        let pixels = resize_plane_bilinear(&normalize_pixels(&plane), w, h, tw, th);
        patches.push(GrayscaleSlice {
            width: tw,
            height: th,
            pixels,
            normalized: true,
            provenance: Some(Provenance { patient: patient.to_string(), slice: b.min[axis] + s, axis }),
        });
        masks.push(LabelMask { width: tw, height: th, labels: resize_plane_nearest(&mplane, w, h, tw, th) });
    }
    Ok(RoiPatchSet { class, bbox: *b, axis, patches, masks, target })
}

/// In-plane size of the box's slices along `axis`.
pub fn crop_plane_dims(b: &BBox3D, axis: usize) -> (usize, usize) {
    slice_dims([b.extent(0), b.extent(1), b.extent(2)], axis)
}

/// Resize a target-resolution patch back to the crop size (nearest).
pub fn map_back_mask(patch: &[u8], target: (usize, usize), b: &BBox3D, axis: usize) -> Vec<u8> {
    let (w, h) = crop_plane_dims(b, axis);
    resize_plane_nearest(patch, target.0, target.1, w, h)
}

/// Resize a target-resolution probability patch back to the crop size (bilinear).
pub fn map_back_probs(patch: &[f32], target: (usize, usize), b: &BBox3D, axis: usize) -> Vec<f32> {
    let (w, h) = crop_plane_dims(b, axis);
    resize_plane_bilinear(patch, target.0, target.1, w, h)
}

/// Write a crop-sized plane into slice `s` (global index along `axis`) of `vol`.
pub fn paste_plane<V: Copy>(vol: &mut Volume<V>, b: &BBox3D, axis: usize, s: usize, plane: &[V]) -> Result<()> {
    let (w, h) = crop_plane_dims(b, axis);
    if plane.len() != w * h || !b.within(vol.dims) || s < b.min[axis] || s > b.max[axis] {
        return Err(shape("paste", format!("plane of {} pixels at slice {s} does not fit {b:?}", plane.len())));
    }
    let rest: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    for row in 0..h {
        for col in 0..w {
            let mut p = [0usize; 3];
            p[axis] = s;
            p[rest[0]] = b.min[rest[0]] + col;
            p[rest[1]] = b.min[rest[1]] + row;
            vol.set(p[0], p[1], p[2], plane[row * w + col]);
        }
    }
    Ok(())
}
