//! NIfTI-1 single-file reader, plus a writer for fixtures and phantoms.

use std::io::{Read, Write};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::volume::{LabelVolume, Volume};

pub const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAX_DIM: i64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    Uint8,
    Int16,
    Float32,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Float32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Datatype::Uint8),
            4 => Ok(Datatype::Int16),
            16 => Ok(Datatype::Float32),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Float32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiftiVolume {
    pub dims: [usize; 3],
    pub datatype: Datatype,
    /// Voxel spacing in mm.
    pub pixdim: [f32; 3],
    pub scl_slope: f32,
    pub scl_inter: f32,
    /// Scaled values, x fastest.
    pub voxels: Vec<f32>,
}

impl NiftiVolume {
    pub fn to_volume(&self) -> Volume<f32> {
        Volume { dims: self.dims, data: self.voxels.clone() }
    }

    /// Interpret the voxels as organ labels.
    pub fn to_labels(&self) -> Result<LabelVolume> {
        let mut data = Vec::with_capacity(self.voxels.len());
        for (i, &v) in self.voxels.iter().enumerate() {
            if v.fract() != 0.0 || !(0.0..=10.0).contains(&v) {
                return Err(invalid("label volume", format!("voxel {i} holds {v}, not an integer label in 0..=10")));
            }
            data.push(v as u8);
        }
        Ok(Volume { dims: self.dims, data })
    }

    pub fn from_volume(vol: &Volume<f32>, datatype: Datatype, pixdim: [f32; 3]) -> Self {
        Self { dims: vol.dims, datatype, pixdim, scl_slope: 1.0, scl_inter: 0.0, voxels: vol.data.clone() }
    }

    pub fn from_labels(vol: &LabelVolume, pixdim: [f32; 3]) -> Self {
        Self {
            dims: vol.dims,
            datatype: Datatype::Uint8,
            pixdim,
            scl_slope: 1.0,
            scl_inter: 0.0,
            voxels: vol.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

pub fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B
}

pub fn gzip(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(bytes)?;
    Ok(enc.finish()?)
}

struct Fields<'a> {
    bytes: &'a [u8],
    big: bool,
}

impl Fields<'_> {
    fn i16(&self, at: usize) -> i16 {
        let b = [self.bytes[at], self.bytes[at + 1]];
        if self.big { i16::from_be_bytes(b) } else { i16::from_le_bytes(b) }
    }

    fn f32(&self, at: usize) -> f32 {
        let b: [u8; 4] = self.bytes[at..at + 4].try_into().unwrap();
        if self.big { f32::from_be_bytes(b) } else { f32::from_le_bytes(b) }
    }
}

pub fn parse_nifti(input: &[u8]) -> Result<NiftiVolume> {
    let inflated;
    let bytes = if is_gzip(input) {
        let mut out = Vec::new();
        GzDecoder::new(input).read_to_end(&mut out)?;
        inflated = out;
        &inflated[..]
    } else {
        input
    };
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Truncated { need: HEADER_SIZE, have: bytes.len() });
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let be = i32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let big = match (le, be) {
        (348, _) => false,
        (_, 348) => true,
        _ => return Err(Error::BadHeaderSize(le)),
    };
    let magic: [u8; 4] = bytes[344..348].try_into().unwrap();
    match &magic {
        b"n+1\0" => {}
        b"ni1\0" => return Err(Error::UnsupportedForm),
        _ => return Err(Error::BadMagic(magic)),
    }
    let f = Fields { bytes, big };

    let ndim = f.i16(40) as i64;
    if !(1..=7).contains(&ndim) {
        return Err(Error::DimOutOfRange { axis: 0, value: ndim });
    }
    let mut dims = [1usize; 3];
    for axis in 1..=ndim as usize {
        let v = f.i16(40 + 2 * axis) as i64;
        if !(1..=MAX_DIM).contains(&v) {
            return Err(Error::DimOutOfRange { axis, value: v });
        }
        if axis <= 3 {
            dims[axis - 1] = v as usize;
        } else if v != 1 {
            return Err(invalid("nifti", format!("only 3D volumes are supported, dim[{axis}] = {v}")));
        }
    }
    let datatype = Datatype::from_code(f.i16(70))?;
    let pixdim = [f.f32(80), f.f32(84), f.f32(88)].map(|p| if p > 0.0 && p.is_finite() { p } else { 1.0 });
    let vox_offset = f.f32(108);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(invalid("nifti", format!("vox_offset {vox_offset} is not a byte offset past the header")));
    }
    let offset = vox_offset as usize;
    let mut scl_slope = f.f32(112);
    let scl_inter = f.f32(116);
    if scl_slope == 0.0 || !scl_slope.is_finite() {
        scl_slope = 1.0;
    }
    let scl_inter = if scl_inter.is_finite() { scl_inter } else { 0.0 };

    let n = dims.iter().product::<usize>();
    let need = offset + n * datatype.bytes();
    if bytes.len() < need {
        return Err(Error::Truncated { need, have: bytes.len() });
    }
    let data = &bytes[offset..need];
    let raw: Vec<f32> = match datatype {
        Datatype::Uint8 => data.iter().map(|&b| b as f32).collect(),
        Datatype::Int16 => data
            .chunks_exact(2)
            .map(|c| {
                let b = [c[0], c[1]];
                (if big { i16::from_be_bytes(b) } else { i16::from_le_bytes(b) }) as f32
            })
            .collect(),
        Datatype::Float32 => data
            .chunks_exact(4)
            .map(|c| {
                let b: [u8; 4] = c.try_into().unwrap();
                if big { f32::from_be_bytes(b) } else { f32::from_le_bytes(b) }
            })
            .collect(),
    };
    let identity = scl_slope == 1.0 && scl_inter == 0.0;
    let mut voxels = raw;
    for (i, v) in voxels.iter_mut().enumerate() {
        if !identity {
            *v = *v * scl_slope + scl_inter;
        }
        if !v.is_finite() {
            return Err(Error::NonFinite(i));
        }
    }
    Ok(NiftiVolume { dims, datatype, pixdim, scl_slope, scl_inter, voxels })
}

/// Little-endian single-file NIfTI-1 with `scl_slope = 1`, voxel data at byte 352.
///
/// Voxels are stored unscaled; integer datatypes require integral values in range.
pub fn write_nifti(vol: &NiftiVolume) -> Result<Vec<u8>> {
    let n: usize = vol.dims.iter().product();
    if vol.voxels.len() != n {
        return Err(crate::error::shape("write nifti", format!("{} voxels for dims {:?}", vol.voxels.len(), vol.dims)));
    }
    for (axis, &d) in vol.dims.iter().enumerate() {
        if d == 0 || d as i64 > MAX_DIM {
            return Err(Error::DimOutOfRange { axis: axis + 1, value: d as i64 });
        }
    }
    let mut h = vec![0u8; VOX_OFFSET];
    h[0..4].copy_from_slice(&348i32.to_le_bytes());
    let dim: [i16; 8] = [3, vol.dims[0] as i16, vol.dims[1] as i16, vol.dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        h[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
    }
    h[70..72].copy_from_slice(&vol.datatype.code().to_le_bytes());
    h[72..74].copy_from_slice(&((vol.datatype.bytes() * 8) as i16).to_le_bytes());
    let pixdim = [1.0f32, vol.pixdim[0], vol.pixdim[1], vol.pixdim[2], 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        h[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
    }
    h[108..112].copy_from_slice(&(VOX_OFFSET as f32).to_le_bytes());
    h[112..116].copy_from_slice(&1f32.to_le_bytes());
    h[116..120].copy_from_slice(&0f32.to_le_bytes());
    // xyzt_units: mm
    h[123] = 2;
    h[344..348].copy_from_slice(b"n+1\0");

    let mut out = h;
    out.reserve(n * vol.datatype.bytes());
    for (i, &v) in vol.voxels.iter().enumerate() {
        match vol.datatype {
            Datatype::Uint8 => {
                if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                    return Err(invalid("write nifti", format!("voxel {i} = {v} does not fit uint8")));
                }
                out.push(v as u8);
            }
            Datatype::Int16 => {
                if v.fract() != 0.0 || !(-32768.0..=32767.0).contains(&v) {
                    return Err(invalid("write nifti", format!("voxel {i} = {v} does not fit int16")));
                }
                out.extend_from_slice(&(v as i16).to_le_bytes());
            }
            Datatype::Float32 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(out)
}
