//! Dense volumes and 2D slices.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};

/// Slicing axis for coronal slices (the second array axis).
pub const CORONAL: usize = 1;

/// Dense 3D array, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<V> {
    pub dims: [usize; 3],
    pub data: Vec<V>,
}

pub type LabelVolume = Volume<u8>;

impl<V: Copy> Volume<V> {
    pub fn new(dims: [usize; 3], data: Vec<V>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) || dims.iter().product::<usize>() != data.len() {
            return Err(shape("volume", format!("{} values for dims {dims:?}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: [usize; 3], value: V) -> Self {
        Self { dims, data: vec![value; dims.iter().product()] }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> V {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: V) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }
}

/// In-plane `(width, height)` of slices taken along `axis`: the two remaining
/// axes in order, the lower one running along rows.
pub fn slice_dims(dims: [usize; 3], axis: usize) -> (usize, usize) {
    let rest: Vec<usize> = (0..3).filter(|&a| a != axis).map(|a| dims[a]).collect();
    (rest[0], rest[1])
}

fn coords(axis: usize, s: usize, col: usize, row: usize) -> (usize, usize, usize) {
    match axis {
        0 => (s, col, row),
        1 => (col, s, row),
        _ => (col, row, s),
    }
}

fn check_axis(axis: usize) -> Result<()> {
    if axis > 2 {
        return Err(invalid("slicing", format!("axis {axis} is not 0, 1 or 2")));
    }
    Ok(())
}

/// One row-major plane per index along `axis`. Under the coronal convention
/// voxel `(x, y, z)` is pixel `(x, z)` of slice `y`.
pub fn extract_planes<V: Copy>(vol: &Volume<V>, axis: usize) -> Result<Vec<Vec<V>>> {
    check_axis(axis)?;
    let (w, h) = slice_dims(vol.dims, axis);
    Ok((0..vol.dims[axis])
        .map(|s| {
            let mut plane = Vec::with_capacity(w * h);
            for row in 0..h {
                for col in 0..w {
                    let (x, y, z) = coords(axis, s, col, row);
                    plane.push(vol.get(x, y, z));
                }
            }
            plane
        })
        .collect())
}

/// Inverse of [`extract_planes`].
pub fn stack_planes<V: Copy + Default>(planes: &[Vec<V>], w: usize, h: usize, axis: usize) -> Result<Volume<V>> {
    check_axis(axis)?;
    if planes.is_empty() || w == 0 || h == 0 {
        return Err(invalid("stack", "need at least one non-empty plane"));
    }
    if let Some(i) = planes.iter().position(|p| p.len() != w * h) {
        return Err(shape("stack", format!("plane {i} has {} pixels, expected {w}x{h}", planes[i].len())));
    }
    let dims = match axis {
        0 => [planes.len(), w, h],
        1 => [w, planes.len(), h],
        _ => [w, h, planes.len()],
    };
    let mut vol = Volume::filled(dims, V::default());
    for (s, plane) in planes.iter().enumerate() {
        for row in 0..h {
            for col in 0..w {
                let (x, y, z) = coords(axis, s, col, row);
                vol.set(x, y, z, plane[row * w + col]);
            }
        }
    }
    Ok(vol)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub patient: String,
    pub slice: usize,
    pub axis: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayscaleSlice {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
    pub normalized: bool,
    pub provenance: Option<Provenance>,
}

impl GrayscaleSlice {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(shape("slice", format!("{} pixels for {width}x{height}", pixels.len())));
        }
        Ok(Self { width, height, pixels, normalized: false, provenance: None })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

/// Highest valid organ label.
pub const MAX_LABEL: u8 = 10;

pub const CLASS_NAMES: [&str; 11] = [
    "background",
    "stomach",
    "duodenum",
    "small_intestine",
    "appendix",
    "cecum",
    "ascending_colon",
    "transverse_colon",
    "descending_colon",
    "sigmoid_colon",
    "rectum",
];

pub const APPENDIX: usize = 4;

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(shape("mask", format!("{} labels for {width}x{height}", labels.len())));
        }
        if let Some(i) = labels.iter().position(|&l| l > MAX_LABEL) {
            return Err(crate::error::Error::BadLabel { label: labels[i], index: i });
        }
        Ok(Self { width, height, labels })
    }

    /// Sorted distinct labels.
    pub fn label_set(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        self.labels.iter().for_each(|&l| seen[l as usize] = true);
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }
}

pub fn volume_to_slices(vol: &Volume<f32>, axis: usize, patient: &str) -> Result<Vec<GrayscaleSlice>> {
    let (w, h) = slice_dims(vol.dims, axis);
    Ok(extract_planes(vol, axis)?
        .into_iter()
        .enumerate()
        .map(|(s, pixels)| GrayscaleSlice {
            width: w,
            height: h,
            pixels,
            normalized: false,
            provenance: Some(Provenance { patient: patient.to_string(), slice: s, axis }),
        })
        .collect())
}

pub fn slices_to_volume(slices: &[GrayscaleSlice], axis: usize) -> Result<Volume<f32>> {
    let first = slices.first().ok_or_else(|| invalid("restack", "no slices"))?;
    let planes: Vec<Vec<f32>> = slices
        .iter()
        .map(|s| {
            if (s.width, s.height) == (first.width, first.height) {
                Ok(s.pixels.clone())
            } else {
                Err(shape("restack", format!("{}x{} among {}x{} slices", s.width, s.height, first.width, first.height)))
            }
        })
        .collect::<Result<_>>()?;
    stack_planes(&planes, first.width, first.height, axis)
}

pub fn volume_to_masks(vol: &LabelVolume, axis: usize) -> Result<Vec<LabelMask>> {
    let (w, h) = slice_dims(vol.dims, axis);
    extract_planes(vol, axis)?.into_iter().map(|labels| LabelMask::new(w, h, labels)).collect()
}

/// Stack per-slice label maps in slice order into a volume.
pub fn stack_predictions(slices: &[LabelMask], axis: usize) -> Result<LabelVolume> {
    let first = slices.first().ok_or_else(|| invalid("stack predictions", "no slices"))?;
    if let Some(s) = slices.iter().find(|s| (s.width, s.height) != (first.width, first.height)) {
        return Err(shape("stack predictions", format!("{}x{} among {}x{} slices", s.width, s.height, first.width, first.height)));
    }
    let planes: Vec<Vec<u8>> = slices.iter().map(|s| s.labels.clone()).collect();
    stack_planes(&planes, first.width, first.height, axis)
}
