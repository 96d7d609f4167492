//! Dataset conversion (NIfTI pairs to PNG slice trees) and loading of the
//! converted tree back into volumes and training samples.

use std::path::{Path, PathBuf};

use enteroseg_core::train::Sample;
use enteroseg_imaging::nifti::parse_nifti;
use enteroseg_imaging::pngio::{decode_gray_png, decode_mask_png, encode_gray_png, encode_mask_png, quantize};
use enteroseg_imaging::resample::{normalize_pixels, resize_plane_bilinear, resize_plane_nearest};
use enteroseg_imaging::volume::{extract_planes, slice_dims, stack_planes, LabelMask, LabelVolume, Volume, CORONAL};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::fsutil::{read, read_json, write_if_changed, write_json};

pub const IMAGE_STEM: &str = "image";
pub const LABEL_STEM: &str = "labels";

/// Per-patient facts stored next to the converted slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientMeta {
    pub patient: String,
    pub dims: [usize; 3],
    pub pixdim: [f32; 3],
    pub axis: usize,
    pub n_slices: usize,
    pub width: usize,
    pub height: usize,
    /// Intensity range mapped onto 0..=255.
    pub lo: f32,
    pub hi: f32,
}

impl PatientMeta {
    pub fn pixdim_f64(&self) -> [f64; 3] {
        self.pixdim.map(|v| v as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvertFailure {
    pub patient: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvertReport {
    pub converted: Vec<String>,
    pub failures: Vec<ConvertFailure>,
    /// Files written because their content differed from what was on disk.
    pub changed_files: usize,
}

pub fn slice_dir(out: &Path, patient: &str) -> PathBuf {
    out.join("slices").join(patient)
}

pub fn mask_dir(out: &Path, patient: &str) -> PathBuf {
    out.join("masks").join(patient)
}

pub fn slice_file(idx: usize) -> String {
    format!("{idx:03}.png")
}

fn find_volume(dir: &Path, stem: &str) -> Option<PathBuf> {
    [format!("{stem}.nii.gz"), format!("{stem}.nii")].into_iter().map(|f| dir.join(f)).find(|p| p.is_file())
}

/// Patient directories under `raw_root`, sorted.
pub fn list_patients(raw_root: &Path) -> Result<Vec<String>> {
    let rd = std::fs::read_dir(raw_root).map_err(io_err(format!("listing {}", raw_root.display())))?;
    let mut ids = Vec::new();
    for entry in rd {
        let entry = entry.map_err(io_err(format!("listing {}", raw_root.display())))?;
        if entry.path().is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Parse one patient's pair into intensities and labels.
pub fn load_raw_pair(dir: &Path, n_classes: usize) -> Result<(Volume<f32>, LabelVolume, [f32; 3])> {
    let image = find_volume(dir, IMAGE_STEM).ok_or_else(|| Error::Invalid(format!("no {IMAGE_STEM}.nii[.gz] in {}", dir.display())))?;
    let labels = find_volume(dir, LABEL_STEM).ok_or_else(|| Error::Invalid(format!("no {LABEL_STEM}.nii[.gz] in {}", dir.display())))?;
    let img = parse_nifti(&read(&image)?)?;
    let lab = parse_nifti(&read(&labels)?)?;
    if img.dims != lab.dims {
        return Err(Error::Invalid(format!("image dims {:?} differ from label dims {:?}", img.dims, lab.dims)));
    }
    let lv = lab.to_labels()?;
    if let Some(&m) = lv.data.iter().max().filter(|&&m| m as usize > n_classes) {
        return Err(Error::Invalid(format!("label {m} exceeds the {n_classes} configured classes")));
    }
    Ok((img.to_volume(), lv, img.pixdim))
}

fn convert_patient(raw_root: &Path, out: &Path, patient: &str, n_classes: usize) -> Result<usize> {
    let (image, labels, pixdim) = load_raw_pair(&raw_root.join(patient), n_classes)?;
    let lo = image.data.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = image.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let (w, h) = slice_dims(image.dims, CORONAL);
    let mut changed = 0;
    let planes = extract_planes(&image, CORONAL)?;
    let masks = extract_planes(&labels, CORONAL)?;
    for (i, (plane, mask)) in planes.iter().zip(&masks).enumerate() {
        let png = encode_gray_png(w, h, &quantize(plane, lo, hi))?;
        changed += write_if_changed(&slice_dir(out, patient).join(slice_file(i)), &png)? as usize;
        let m = encode_mask_png(&LabelMask::new(w, h, mask.clone())?)?;
        changed += write_if_changed(&mask_dir(out, patient).join(slice_file(i)), &m)? as usize;
    }
    let meta = PatientMeta {
        patient: patient.into(),
        dims: image.dims,
        pixdim,
        axis: CORONAL,
        n_slices: planes.len(),
        width: w,
        height: h,
        lo,
        hi,
    };
    changed += write_json(&slice_dir(out, patient).join("meta.json"), &meta)? as usize;
    Ok(changed)
}

/// Convert every patient directory under `raw_root`. A patient that fails is
/// reported and skipped.
pub fn convert_dataset(raw_root: &Path, out: &Path, n_classes: usize) -> Result<ConvertReport> {
    let mut report = ConvertReport::default();
    for patient in list_patients(raw_root)? {
        match convert_patient(raw_root, out, &patient, n_classes) {
            Ok(c) => {
                report.changed_files += c;
                report.converted.push(patient);
            }
            Err(e) => report.failures.push(ConvertFailure { patient, error: e.to_string() }),
        }
    }
    Ok(report)
}

/// A converted patient read back from the slice tree.
#[derive(Debug, Clone)]
pub struct PatientData {
    pub meta: PatientMeta,
    /// Quantized intensities (0..=255) as floats.
    pub intensity: Volume<f32>,
    pub labels: LabelVolume,
}

impl PatientData {
    pub fn image_planes(&self) -> Result<Vec<Vec<f32>>> {
        Ok(extract_planes(&self.intensity, CORONAL)?)
    }

    pub fn label_planes(&self) -> Result<Vec<Vec<u8>>> {
        Ok(extract_planes(&self.labels, CORONAL)?)
    }
}

pub fn load_meta(out: &Path, patient: &str) -> Result<PatientMeta> {
    read_json(&slice_dir(out, patient).join("meta.json"))
}

/// Read a directory of `NNN.png` label masks as a volume.
pub fn load_mask_tree(dir: &Path, meta: &PatientMeta) -> Result<LabelVolume> {
    let mut planes = Vec::with_capacity(meta.n_slices);
    for i in 0..meta.n_slices {
        let m = decode_mask_png(&read(&dir.join(slice_file(i)))?)?;
        if (m.width, m.height) != (meta.width, meta.height) {
            return Err(Error::Invalid(format!("{}: mask {i} is {}x{}", dir.display(), m.width, m.height)));
        }
        planes.push(m.labels);
    }
    Ok(stack_planes(&planes, meta.width, meta.height, meta.axis)?)
}

pub fn load_patient(out: &Path, patient: &str) -> Result<PatientData> {
    let meta = load_meta(out, patient)?;
    let mut planes = Vec::with_capacity(meta.n_slices);
    for i in 0..meta.n_slices {
        let (w, h, px) = decode_gray_png(&read(&slice_dir(out, patient).join(slice_file(i)))?)?;
        if (w, h) != (meta.width, meta.height) {
            return Err(Error::Invalid(format!("{patient}: slice {i} is {w}x{h}")));
        }
        planes.push(px.into_iter().map(f32::from).collect::<Vec<f32>>());
    }
    let intensity = stack_planes(&planes, meta.width, meta.height, meta.axis)?;
    let labels = load_mask_tree(&mask_dir(out, patient), &meta)?;
    Ok(PatientData { meta, intensity, labels })
}

/// Network input for one native slice: bilinear resize to `size` squared,
/// then per-slice standardization.
pub fn coarse_input(plane: &[f32], w: usize, h: usize, size: usize) -> Vec<f32> {
    normalize_pixels(&resize_plane_bilinear(plane, w, h, size, size))
}

/// Multiclass samples for every coronal slice of `patients`.
pub fn coarse_samples(patients: &[PatientData], size: usize) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for p in patients {
        let (w, h) = (p.meta.width, p.meta.height);
        for (i, (img, lab)) in p.image_planes()?.iter().zip(p.label_planes()?).enumerate() {
            out.push(Sample {
                id: format!("{}/{i}", p.meta.patient),
                width: size,
                height: size,
                image: coarse_input(img, w, h, size),
                target: resize_plane_nearest(&lab, w, h, size, size),
            });
        }
    }
    Ok(out)
}
