//! Seeded synthetic abdominal phantoms: a body cylinder holding ellipsoid and
//! tube shaped organs, with one optionally rare, tiny class.

use std::f64::consts::PI;
use std::path::Path;

use enteroseg_imaging::nifti::{gzip, write_nifti, Datatype, NiftiVolume};
use enteroseg_imaging::volume::{LabelVolume, Volume, MAX_LABEL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_if_changed;

/// Upper bound on a rare class's share of the voxels.
pub const RARE_MAX_FRACTION: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Ellipsoid,
    /// A sinuous tube running along x.
    Tube,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrganSpec {
    pub name: String,
    pub shape: Shape,
    /// Radius range as a fraction of each axis extent.
    pub radius: [f64; 2],
    /// Mean intensity range.
    pub contrast: [f64; 2],
    /// Probability that a phantom contains this organ.
    #[serde(default = "one")]
    pub prevalence: f64,
    /// Marks the rare class; its largest possible volume must stay under
    /// [`RARE_MAX_FRACTION`] of the phantom.
    #[serde(default)]
    pub rare: bool,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub patients: usize,
    /// `[x, y, z]`; y is the coronal slice axis.
    pub dims: [usize; 3],
    #[serde(default = "unit_pixdim")]
    pub pixdim: [f32; 3],
    /// Intensity of the body cylinder around the organs.
    pub body: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    pub organs: Vec<OrganSpec>,
}

fn unit_pixdim() -> [f32; 3] {
    [1.0, 1.0, 1.0]
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("phantom: {m}")));
        if self.patients == 0 {
            return bad("patients must be >= 1".into());
        }
        if self.dims.iter().any(|&d| d < 4) {
            return bad(format!("dims {:?} must all be >= 4", self.dims));
        }
        if self.organs.is_empty() || self.organs.len() > MAX_LABEL as usize {
            return bad("between 1 and 10 organs are required".into());
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be non-negative".into());
        }
        let total = self.dims.iter().product::<usize>() as f64;
        for o in &self.organs {
            let [lo, hi] = o.radius;
            if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
                return bad(format!("organ `{}`: radius range {:?} must satisfy 0 < lo <= hi <= 0.5", o.name, o.radius));
            }
            if !(o.contrast[0] <= o.contrast[1]) {
                return bad(format!("organ `{}`: contrast range is reversed", o.name));
            }
            if !(0.0..=1.0).contains(&o.prevalence) {
                return bad(format!("organ `{}`: prevalence outside [0, 1]", o.name));
            }
            if o.rare {
                if o.shape != Shape::Ellipsoid {
                    return bad(format!("rare organ `{}` must be an ellipsoid", o.name));
                }
                // Lattice points within radius r along an axis: at most floor(2r) + 1.
                let bound: f64 = self.dims.iter().map(|&d| (2.0 * (hi * d as f64).max(0.5)).floor() + 1.0).product();
                if bound >= RARE_MAX_FRACTION * total {
                    return bad(format!(
                        "rare organ `{}` may cover {bound} voxels, over {:.0}% of {total}",
                        o.name,
                        RARE_MAX_FRACTION * 100.0
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientStats {
    pub patient: String,
    /// Voxel count per label, background first.
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhantomStats {
    pub seed: u64,
    pub classes: Vec<String>,
    pub patients: Vec<PatientStats>,
}

pub fn patient_id(i: usize) -> String {
    format!("phantom_{i:03}")
}

fn patient_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Generate phantom `index`: intensities and labels.
pub fn generate(spec: &PhantomSpec, seed: u64, index: usize) -> Result<(Volume<f32>, LabelVolume)> {
    spec.validate()?;
    let mut rng = patient_rng(seed, index);
    let dims = spec.dims;
    let [nx, ny, nz] = dims;
    let mut labels: LabelVolume = Volume::filled(dims, 0);
    let mut mean: Volume<f32> = Volume::filled(dims, 0.0);

    // Body: elliptic cylinder along y filling most of the x-z plane.
    let (cx, cz) = ((nx as f64 - 1.0) / 2.0, (nz as f64 - 1.0) / 2.0);
    let (bx, bz) = (0.46 * nx as f64, 0.46 * nz as f64);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let r = ((x as f64 - cx) / bx).powi(2) + ((z as f64 - cz) / bz).powi(2);
                if r <= 1.0 {
                    mean.set(x, y, z, spec.body as f32);
                }
            }
        }
    }

    // Rare organs are drawn last so nothing paints over them.
    let mut order: Vec<usize> = (0..spec.organs.len()).collect();
    order.sort_by_key(|&i| spec.organs[i].rare);
    for i in order {
        let organ = &spec.organs[i];
        let label = i as u8 + 1;
        if !rng.gen_bool(organ.prevalence) {
            continue;
        }
        let intensity = uniform(&mut rng, organ.contrast) as f32;
        let radii: Vec<f64> = dims.iter().map(|&d| (uniform(&mut rng, organ.radius) * d as f64).max(0.5)).collect();
        // Centres stay inside the body and the volume.
        let centre: Vec<f64> = (0..3)
            .map(|a| {
                let d = dims[a] as f64;
                let half = if a == 1 { d / 2.0 } else { 0.46 * d };
                let margin = match organ.shape {
                    Shape::Ellipsoid => radii[a] + 1.0,
                    Shape::Tube => radii[a] + 0.2 * d,
                };
                let lo = ((d - 1.0) / 2.0 - half + margin).min((d - 1.0) / 2.0);
                let hi = ((d - 1.0) / 2.0 + half - margin).max((d - 1.0) / 2.0);
                // On a voxel, so even the smallest organ covers its centre.
                uniform(&mut rng, [lo, hi]).round()
            })
            .collect();
        let inside: Box<dyn Fn(f64, f64, f64) -> bool> = match organ.shape {
            Shape::Ellipsoid => {
                let (c, r) = (centre.clone(), radii.clone());
                Box::new(move |x, y, z| {
                    ((x - c[0]) / r[0]).powi(2) + ((y - c[1]) / r[1]).powi(2) + ((z - c[2]) / r[2]).powi(2) <= 1.0
                })
            }
            Shape::Tube => {
                let half_len = uniform(&mut rng, [0.2, 0.35]) * nx as f64;
                let amp = uniform(&mut rng, [0.05, 0.15]) * nz as f64;
                let period = uniform(&mut rng, [0.5, 1.0]) * nx as f64;
                let phase = uniform(&mut rng, [0.0, 2.0 * PI]);
                let (c, r) = (centre.clone(), radii.clone());
                Box::new(move |x, y, z| {
                    if (x - c[0]).abs() > half_len {
                        return false;
                    }
                    let zc = c[2] + amp * (2.0 * PI * x / period + phase).sin();
                    ((y - c[1]) / r[1]).powi(2) + ((z - zc) / r[2]).powi(2) <= 1.0
                })
            }
        };
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if inside(x as f64, y as f64, z as f64) {
                        labels.set(x, y, z, label);
                        mean.set(x, y, z, intensity);
                    }
                }
            }
        }
    }

    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::Config(format!("phantom noise: {e}")))?;
    let data = mean
        .data
        .iter()
        .map(|&m| (m as f64 + noise.sample(&mut rng)).round().clamp(i16::MIN as f64, i16::MAX as f64) as f32)
        .collect();
    Ok((Volume { dims, data }, labels))
}

pub fn label_counts(labels: &LabelVolume, n_labels: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n_labels];
    for &v in &labels.data {
        counts[v as usize] += 1;
    }
    counts
}

/// Write `spec.patients` phantoms as gzipped NIfTI pairs under `root`, plus
/// `phantom_stats.json`. Returns the stats and the number of files that
/// changed on disk.
pub fn write_phantoms(spec: &PhantomSpec, seed: u64, root: &Path) -> Result<(PhantomStats, usize)> {
    spec.validate()?;
    let mut patients = Vec::new();
    let mut changed = 0;
    for i in 0..spec.patients {
        let id = patient_id(i);
        let (image, labels) = generate(spec, seed, i)?;
        let dir = root.join(&id);
        let img = write_nifti(&NiftiVolume::from_volume(&image, Datatype::Int16, spec.pixdim))?;
        let lab = write_nifti(&NiftiVolume::from_labels(&labels, spec.pixdim))?;
        changed += write_if_changed(&dir.join("image.nii.gz"), &gzip(&img)?)? as usize;
        changed += write_if_changed(&dir.join("labels.nii.gz"), &gzip(&lab)?)? as usize;
        patients.push(PatientStats { patient: id, counts: label_counts(&labels, spec.organs.len() + 1) });
    }
    let stats = PhantomStats { seed, classes: spec.organs.iter().map(|o| o.name.clone()).collect(), patients };
    let json = serde_json::to_vec_pretty(&stats).map_err(crate::error::json_err)?;
    changed += write_if_changed(&root.join("phantom_stats.json"), &json)? as usize;
    Ok((stats, changed))
}
