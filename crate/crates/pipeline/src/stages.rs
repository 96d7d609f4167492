//! The pipeline commands. Each reads its inputs through the manifest, writes
//! its outputs under the output root and records them.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use enteroseg_core::checkpoint;
use enteroseg_core::loss::LossKind;
use enteroseg_core::nets::{BinaryNet, CoarseNet, SegmentationNet};
use enteroseg_core::train::{predict, Augment, Sample, TrainConfig, TrainLog, Trainer};
use enteroseg_imaging::augment::{augment, AugmentationSpec};
use enteroseg_imaging::folds::{stratified_kfold, Fold, FoldPlan};
use enteroseg_imaging::metrics::{aggregate, evaluate_class, mean_class_metrics, render_comparison, render_table, ClassMetrics, MetricsReport};
use enteroseg_imaging::pngio::{encode_gray_png, encode_mask_png, quantize};
use enteroseg_imaging::resample::resize_plane_bilinear;
use enteroseg_imaging::roi::{class_bbox, extract_roi, largest_component_bbox, map_back_mask, map_back_probs, pad_bbox, paste_plane, BBox3D, RoiPatchSet};
use enteroseg_imaging::volume::{extract_planes, GrayscaleSlice, LabelMask, LabelVolume, Volume, CORONAL};
use enteroseg_imaging::weights::{compute_class_weights, WeightScheme};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, Stage, WeightBase};
use crate::data::{coarse_input, coarse_samples, convert_dataset, load_mask_tree, load_meta, load_patient, slice_file, ConvertReport, PatientData};
use crate::error::{io_err, Error, Result};
use crate::fsutil::{create_dir, read, read_json, write_if_changed, write_json};
use crate::manifest::{self as mf, rel, PipelineManifest};
use crate::phantom::{write_phantoms, PhantomStats};

const PREDICT_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiSource {
    /// Box of the ground-truth organ (training and validation patients).
    GroundTruth,
    /// Box of the largest connected stage-1 component (test patients).
    Stage1,
    /// Stage 1 predicted nothing for this class.
    Miss,
    /// The organ is absent from this training or validation patient.
    Absent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiEntry {
    pub patient: String,
    pub role: Role,
    pub source: RoiSource,
    /// Padded box, when there is one.
    pub bbox: Option<BBox3D>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiManifest {
    pub class: String,
    pub label: u8,
    pub pad: usize,
    pub target: (usize, usize),
    pub axis: usize,
    pub entries: Vec<RoiEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_patients: Vec<String>,
    pub val_patients: Vec<String>,
    pub train_samples: usize,
    pub val_samples: usize,
    /// Validation fell back to the training samples.
    pub val_from_train: bool,
    pub class_weights: Option<Vec<f64>>,
    pub config: TrainConfig,
    pub log: TrainLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEval {
    pub fold: usize,
    pub patients: Vec<String>,
    pub stage1: MetricsReport,
    pub stage2: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub folds: Vec<usize>,
    pub stage1: MetricsReport,
    pub stage2: MetricsReport,
    pub table: String,
}

fn samples_from_roi(set: &RoiPatchSet) -> Vec<Sample> {
    set.patches
        .iter()
        .zip(&set.masks)
        .map(|(p, m)| Sample {
            id: p.provenance.as_ref().map(|pv| format!("{}/{}", pv.patient, pv.slice)).unwrap_or_default(),
            width: p.width,
            height: p.height,
            image: p.pixels.clone(),
            target: m.labels.clone(),
        })
        .collect()
}

/// On-the-fly joint augmentation of a training sample.
fn augmenter(spec: AugmentationSpec) -> impl Fn(&Sample, &mut ChaCha8Rng) -> Sample {
    move |s: &Sample, rng: &mut ChaCha8Rng| {
        let img = GrayscaleSlice { width: s.width, height: s.height, pixels: s.image.clone(), normalized: true, provenance: None };
        let mask = LabelMask { width: s.width, height: s.height, labels: s.target.clone() };
        match augment(&img, &mask, &spec, rng) {
            Ok((i, m)) => Sample { id: s.id.clone(), width: s.width, height: s.height, image: i.pixels, target: m.labels },
            Err(_) => s.clone(),
        }
    }
}

fn run_trainer<N: SegmentationNet<f32>>(
    net: &mut N,
    cfg: TrainConfig,
    loss: LossKind,
    aug: Option<&AugmentationSpec>,
    log_path: &Path,
    train: &[Sample],
    val: &[Sample],
) -> Result<enteroseg_core::train::TrainOutcome<f32>> {
    let file = File::create(log_path).map_err(io_err(format!("creating {}", log_path.display())))?;
    let mut sink = BufWriter::new(file);
    let f = aug.cloned().map(augmenter);
    let f_ref: Option<&Augment> = f.as_ref().map(|f| f as &Augment);
    let outcome = {
        let mut trainer = Trainer::new(cfg, loss);
        trainer.augment = f_ref;
        trainer.log_sink = Some(&mut sink);
        trainer.run(net, train, val)?
    };
    sink.flush().map_err(io_err(format!("writing {}", log_path.display())))?;
    Ok(outcome)
}

/// Probability-argmax over `[C, size, size]` after resizing each channel
/// back to `w x h`.
pub fn argmax_native(probs: &[f32], classes: usize, size: usize, w: usize, h: usize) -> Vec<u8> {
    let planes: Vec<Vec<f32>> = (0..classes)
        .map(|c| resize_plane_bilinear(&probs[c * size * size..(c + 1) * size * size], size, size, w, h))
        .collect();
    (0..w * h)
        .map(|i| {
            let mut best = 0;
            for c in 1..classes {
                if planes[c][i] > planes[best][i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

/// Combine per-class binary masks into one label map; overlapping pixels go
/// to the class with the higher probability, ties to the lower label.
pub fn combine_binary(masks: &[Vec<u8>], probs: &[Vec<f32>]) -> Vec<u8> {
    let n = masks.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let mut best: Option<usize> = None;
            for c in 0..masks.len() {
                if masks[c][i] != 0 && best.map_or(true, |b| probs[c][i] > probs[b][i]) {
                    best = Some(c);
                }
            }
            best.map_or(0, |c| c as u8 + 1)
        })
        .collect()
}

/// Paste the back-mapped stage-2 output of one ROI into full-resolution
/// mask and probability volumes.
pub fn map_back_roi(
    patch_probs: &[Vec<f32>],
    target: (usize, usize),
    bbox: &BBox3D,
    threshold: f64,
    mask: &mut LabelVolume,
    prob: &mut Volume<f32>,
) -> Result<()> {
    if patch_probs.len() != bbox.extent(CORONAL) {
        return Err(Error::Invalid(format!("{} patches for a box spanning {} slices", patch_probs.len(), bbox.extent(CORONAL))));
    }
    for (k, p) in patch_probs.iter().enumerate() {
        let bin: Vec<u8> = p.iter().map(|&v| (v as f64 >= threshold) as u8).collect();
        let s = bbox.min[CORONAL] + k;
        paste_plane(mask, bbox, CORONAL, s, &map_back_mask(&bin, target, bbox, CORONAL))?;
        paste_plane(prob, bbox, CORONAL, s, &map_back_probs(p, target, bbox, CORONAL))?;
    }
    Ok(())
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, out: impl Into<PathBuf>) -> Self {
        Self { cfg, out: out.into() }
    }

    fn manifest(&self) -> Result<PipelineManifest> {
        PipelineManifest::load_or_default(&self.out)
    }

    fn record(&self, key: String, stage: Stage, files: &[PathBuf]) -> Result<()> {
        let mut m = self.manifest()?;
        m.record(key, self.cfg.stage_hash(stage), files.iter().map(|f| rel(&self.out, f)).collect());
        m.save(&self.out)
    }

    pub fn fold_dir(&self, fold: usize) -> PathBuf {
        self.out.join(format!("fold{fold}"))
    }

    fn coarse_ckpt(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("coarse.ckpt")
    }

    pub fn pred_dir(&self, fold: usize, patient: &str) -> PathBuf {
        self.fold_dir(fold).join("pred").join(patient)
    }

    pub fn stage2_dir(&self, fold: usize, patient: &str) -> PathBuf {
        self.fold_dir(fold).join("stage2").join(patient)
    }

    fn roi_dir(&self, fold: usize, class: &str) -> PathBuf {
        self.fold_dir(fold).join("roi").join(class)
    }

    fn organ_ckpt(&self, fold: usize, class: &str) -> PathBuf {
        self.fold_dir(fold).join(format!("organ_{class}.ckpt"))
    }

    fn classes_for(&self, class: Option<&str>) -> Result<Vec<(String, u8)>> {
        match class {
            Some(c) => Ok(vec![(c.to_string(), self.cfg.class_label(c)?)]),
            None => Ok(self.cfg.data.classes.iter().enumerate().map(|(i, c)| (c.clone(), i as u8 + 1)).collect()),
        }
    }

    pub fn phantom(&self) -> Result<(PhantomStats, usize)> {
        let spec = self.cfg.phantom.as_ref().ok_or_else(|| Error::Config("no [phantom] section in the config".into()))?;
        let root = self.cfg.raw_root(&self.out);
        let (stats, changed) = write_phantoms(spec, self.cfg.seed, &root)?;
        self.record(mf::key_raw(), Stage::Phantom, &[root.join("phantom_stats.json")])?;
        Ok((stats, changed))
    }

    pub fn convert(&self) -> Result<ConvertReport> {
        let root = self.cfg.raw_root(&self.out);
        let report = convert_dataset(&root, &self.out, self.cfg.n_classes())?;
        if report.converted.is_empty() {
            return Err(Error::Invalid(format!("no patient under {} converted; failures: {:?}", root.display(), report.failures)));
        }
        let path = self.out.join("dataset.json");
        write_json(&path, &report.converted)?;
        self.record(mf::key_dataset(), Stage::Convert, &[path])?;
        Ok(report)
    }

    pub fn patients(&self) -> Result<Vec<String>> {
        let m = self.manifest()?;
        m.require(&self.out, &mf::key_dataset(), &self.cfg, Stage::Convert)?;
        read_json(&self.out.join("dataset.json"))
    }

    pub fn split(&self) -> Result<FoldPlan> {
        let patients = self.patients()?;
        let plan = stratified_kfold(&patients, self.cfg.folds.k, self.cfg.seed)?;
        let path = self.out.join("folds.toml");
        let text = toml::to_string(&plan).map_err(|e| Error::Invalid(format!("serializing fold plan: {e}")))?;
        write_if_changed(&path, text.as_bytes())?;
        self.record(mf::key_folds(), Stage::Split, &[path])?;
        Ok(plan)
    }

    pub fn fold_plan(&self) -> Result<FoldPlan> {
        let m = self.manifest()?;
        m.require(&self.out, &mf::key_folds(), &self.cfg, Stage::Split)?;
        let text = String::from_utf8_lossy(&read(&self.out.join("folds.toml"))?).into_owned();
        toml::from_str(&text).map_err(|e| Error::Invalid(format!("folds.toml: {e}")))
    }

    pub fn fold(&self, fold: usize) -> Result<Fold> {
        let plan = self.fold_plan()?;
        plan.folds
            .get(fold)
            .cloned()
            .ok_or_else(|| Error::Invalid(format!("fold {fold} does not exist; the plan has folds 0..{}", plan.k)))
    }

    fn load_all(&self, ids: &[String]) -> Result<Vec<PatientData>> {
        ids.iter().map(|p| load_patient(&self.out, p)).collect()
    }

    fn coarse_weights(&self, train: &[Sample]) -> Result<Vec<f64>> {
        let n = self.cfg.n_classes() + 1;
        let w = &self.cfg.coarse.weighting;
        let boost = w.boost_class.as_deref().map(|c| self.cfg.class_label(c)).transpose()?.map(|l| (l as usize, w.boost_factor));
        match w.base {
            WeightBase::InverseFrequency => {
                let masks: Vec<LabelMask> =
                    train.iter().map(|s| LabelMask { width: s.width, height: s.height, labels: s.target.clone() }).collect();
                let scheme = WeightScheme { n_classes: n, boost, allow_absent: (1..n).collect() };
                Ok(compute_class_weights(&masks, &scheme)?.weights)
            }
            WeightBase::Uniform => {
                let mut ws = vec![1.0; n];
                if let Some((c, f)) = boost {
                    ws[c] *= f;
                }
                let mean = ws.iter().sum::<f64>() / n as f64;
                Ok(ws.into_iter().map(|v| v / mean).collect())
            }
        }
    }

    pub fn train_coarse(&self, fold: usize) -> Result<TrainSummary> {
        let f = self.fold(fold)?;
        let size = self.cfg.coarse.net.input_size;
        let train = coarse_samples(&self.load_all(&f.train)?, size)?;
        let val = coarse_samples(&self.load_all(&f.val)?, size)?;
        let weights = self.coarse_weights(&train)?;
        let cfg = self.cfg.coarse_train(fold);
        let mut net = CoarseNet::<f32>::new(self.cfg.coarse.net.clone(), cfg.seed)?;
        let dir = self.fold_dir(fold);
        create_dir(&dir)?;
        let log_path = dir.join("coarse_log.jsonl");
        let outcome = run_trainer(
            &mut net,
            cfg.clone(),
            LossKind::WeightedCe { weights: weights.clone() },
            self.cfg.coarse.augment.as_ref(),
            &log_path,
            &train,
            &val,
        )?;
        let ckpt = self.coarse_ckpt(fold);
        checkpoint::save(&outcome.best, &ckpt)?;
        let summary = TrainSummary {
            train_patients: f.train.clone(),
            val_patients: f.val.clone(),
            train_samples: train.len(),
            val_samples: val.len(),
            val_from_train: false,
            class_weights: Some(weights),
            config: cfg,
            log: outcome.log,
        };
        let meta = dir.join("coarse.json");
        write_json(&meta, &summary)?;
        self.record(mf::key_coarse(fold), Stage::Coarse, &[ckpt, log_path, meta])?;
        Ok(summary)
    }

    pub fn load_coarse(&self, fold: usize) -> Result<CoarseNet<f32>> {
        self.manifest()?.require(&self.out, &mf::key_coarse(fold), &self.cfg, Stage::Coarse)?;
        let mut net = CoarseNet::<f32>::new(self.cfg.coarse.net.clone(), 0)?;
        checkpoint::load(net.params_mut(), &self.coarse_ckpt(fold))?;
        Ok(net)
    }

    /// Stage-1 label planes at native resolution for one patient.
    pub fn coarse_predict_patient(&self, net: &mut CoarseNet<f32>, p: &PatientData) -> Result<Vec<Vec<u8>>> {
        let size = self.cfg.coarse.net.input_size;
        let classes = self.cfg.coarse.net.n_classes;
        let (w, h) = (p.meta.width, p.meta.height);
        let samples: Vec<Sample> = p
            .image_planes()?
            .iter()
            .enumerate()
            .map(|(i, img)| Sample {
                id: format!("{}/{i}", p.meta.patient),
                width: size,
                height: size,
                image: coarse_input(img, w, h, size),
                target: vec![0; size * size],
            })
            .collect();
        let probs = predict(net, &samples, PREDICT_BATCH)?;
        Ok(probs.iter().map(|pr| argmax_native(pr, classes, size, w, h)).collect())
    }

    pub fn predict_coarse(&self, fold: usize) -> Result<()> {
        let f = self.fold(fold)?;
        let mut net = self.load_coarse(fold)?;
        let mut files = Vec::new();
        for id in f.train.iter().chain(&f.val).chain(&f.test) {
            let p = load_patient(&self.out, id)?;
            let dir = self.pred_dir(fold, id);
            for (i, plane) in self.coarse_predict_patient(&mut net, &p)?.into_iter().enumerate() {
                let png = encode_mask_png(&LabelMask { width: p.meta.width, height: p.meta.height, labels: plane })?;
                write_if_changed(&dir.join(slice_file(i)), &png)?;
            }
            files.push(dir);
        }
        self.record(mf::key_pred(fold), Stage::Coarse, &files)
    }

    /// Stage-1 prediction volume of one patient.
    pub fn load_prediction(&self, fold: usize, patient: &str) -> Result<LabelVolume> {
        load_mask_tree(&self.pred_dir(fold, patient), &load_meta(&self.out, patient)?)
    }

    fn roles(f: &Fold) -> Vec<(String, Role)> {
        let tag = |ids: &[String], r: Role| ids.iter().map(move |p| (p.clone(), r)).collect::<Vec<_>>();
        [tag(&f.train, Role::Train), tag(&f.val, Role::Val), tag(&f.test, Role::Test)].concat()
    }

    fn roi_target(&self) -> (usize, usize) {
        let s = self.cfg.organ.net.input_size;
        (s, s)
    }

    pub fn extract_roi(&self, fold: usize, class: Option<&str>) -> Result<Vec<RoiManifest>> {
        let f = self.fold(fold)?;
        self.manifest()?.require(&self.out, &mf::key_pred(fold), &self.cfg, Stage::Coarse)?;
        let classes = self.classes_for(class)?;
        let target = self.roi_target();
        let mut data = Vec::new();
        for (id, role) in Self::roles(&f) {
            let p = load_patient(&self.out, &id)?;
            let pred = self.load_prediction(fold, &id)?;
            data.push((id, role, p, pred));
        }
        let mut out = Vec::new();
        for (name, label) in classes {
            let dir = self.roi_dir(fold, &name);
            let mut entries = Vec::new();
            for (id, role, p, pred) in &data {
                let (source, raw) = match role {
                    Role::Train | Role::Val => match class_bbox(&p.labels, label) {
                        Some(b) => (RoiSource::GroundTruth, Some(b)),
                        None => (RoiSource::Absent, None),
                    },
                    Role::Test => match largest_component_bbox(pred, label) {
                        Some(b) => (RoiSource::Stage1, Some(b)),
                        None => (RoiSource::Miss, None),
                    },
                };
                let bbox = raw.map(|b| pad_bbox(&b, self.cfg.organ.pad, p.intensity.dims));
                if let Some(b) = &bbox {
                    // Inspection copies; training rebuilds the float patches.
                    let gt = if *role == Role::Test { Volume::filled(p.labels.dims, 0u8) } else { p.labels.clone() };
                    let set = extract_roi(&p.intensity, &gt, b, label, target, CORONAL, id)?;
                    for (k, (img, m)) in set.patches.iter().zip(&set.masks).enumerate() {
                        let lo = img.pixels.iter().copied().fold(f32::INFINITY, f32::min);
                        let hi = img.pixels.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                        let s = b.min[CORONAL] + k;
                        let png = encode_gray_png(img.width, img.height, &quantize(&img.pixels, lo, hi))?;
                        write_if_changed(&dir.join(id).join(format!("{s:03}.png")), &png)?;
                        write_if_changed(&dir.join(id).join(format!("{s:03}_mask.png")), &encode_mask_png(m)?)?;
                    }
                }
                entries.push(RoiEntry { patient: id.clone(), role: *role, source, bbox });
            }
            let rm = RoiManifest { class: name.clone(), label, pad: self.cfg.organ.pad, target, axis: CORONAL, entries };
            let path = dir.join("manifest.json");
            write_json(&path, &rm)?;
            self.record(mf::key_roi(fold, &name), Stage::Roi, &[path])?;
            out.push(rm);
        }
        Ok(out)
    }

    pub fn roi_manifest(&self, fold: usize, class: &str) -> Result<RoiManifest> {
        self.manifest()?.require(&self.out, &mf::key_roi(fold, class), &self.cfg, Stage::Roi)?;
        read_json(&self.roi_dir(fold, class).join("manifest.json"))
    }

    /// Float patches of every entry of `role` that has a box.
    fn roi_samples(&self, rm: &RoiManifest, role: Role) -> Result<(Vec<Sample>, Vec<String>)> {
        let mut samples = Vec::new();
        let mut ids = Vec::new();
        for e in rm.entries.iter().filter(|e| e.role == role) {
            if let Some(b) = &e.bbox {
                let p = load_patient(&self.out, &e.patient)?;
                let set = extract_roi(&p.intensity, &p.labels, b, rm.label, rm.target, rm.axis, &e.patient)?;
                samples.extend(samples_from_roi(&set));
                ids.push(e.patient.clone());
            }
        }
        Ok((samples, ids))
    }

    fn check_roi_roles(rm: &RoiManifest, f: &Fold) -> Result<()> {
        for e in &rm.entries {
            let expected = if f.train.contains(&e.patient) {
                Role::Train
            } else if f.val.contains(&e.patient) {
                Role::Val
            } else if f.test.contains(&e.patient) {
                Role::Test
            } else {
                return Err(Error::Leakage(format!("ROI entry for `{}` is not in the fold plan", e.patient)));
            };
            if e.role != expected {
                return Err(Error::Leakage(format!("ROI entry for `{}` is tagged {:?} but the fold says {expected:?}", e.patient, e.role)));
            }
        }
        Ok(())
    }

    fn train_one_organ(&self, fold: usize, f: &Fold, name: &str) -> Result<(TrainSummary, Vec<PathBuf>)> {
        let rm = self.roi_manifest(fold, name)?;
        Self::check_roi_roles(&rm, f)?;
        let (train, train_ids) = self.roi_samples(&rm, Role::Train)?;
        if train.is_empty() {
            return Err(Error::Invalid(format!("class `{name}` has no training ROIs in fold {fold}")));
        }
        let (mut val, val_ids) = self.roi_samples(&rm, Role::Val)?;
        let val_from_train = val.is_empty();
        if val_from_train {
            val = train.clone();
        }
        let mut cfg = self.cfg.organ_train(fold);
        cfg.seed = cfg.seed.wrapping_add(rm.label as u64);
        let mut net = BinaryNet::<f32>::new(self.cfg.organ.net.clone(), cfg.seed)?;
        let dir = self.fold_dir(fold);
        let log_path = dir.join(format!("organ_{name}_log.jsonl"));
        let outcome = run_trainer(&mut net, cfg.clone(), LossKind::Composite, self.cfg.organ.augment.as_ref(), &log_path, &train, &val)?;
        let ckpt = self.organ_ckpt(fold, name);
        checkpoint::save(&outcome.best, &ckpt)?;
        let summary = TrainSummary {
            train_patients: train_ids,
            val_patients: val_ids,
            train_samples: train.len(),
            val_samples: val.len(),
            val_from_train,
            class_weights: None,
            config: cfg,
            log: outcome.log,
        };
        let meta = dir.join(format!("organ_{name}.json"));
        write_json(&meta, &summary)?;
        Ok((summary, vec![ckpt, log_path, meta]))
    }

    pub fn train_organ(&self, fold: usize, class: Option<&str>) -> Result<Vec<(String, TrainSummary)>> {
        let f = self.fold(fold)?;
        create_dir(&self.fold_dir(fold))?;
        let classes = self.classes_for(class)?;
        let results: Vec<Result<(TrainSummary, Vec<PathBuf>)>> = if self.cfg.organ.parallel && classes.len() > 1 {
            std::thread::scope(|s| {
                let handles: Vec<_> = classes.iter().map(|(name, _)| s.spawn(|| self.train_one_organ(fold, &f, name))).collect();
                handles.into_iter().map(|h| h.join().expect("organ training thread panicked")).collect()
            })
        } else {
            classes.iter().map(|(name, _)| self.train_one_organ(fold, &f, name)).collect()
        };
        let mut out = Vec::new();
        for ((name, _), r) in classes.iter().zip(results) {
            let (summary, files) = r?;
            self.record(mf::key_organ(fold, name), Stage::Organ, &files)?;
            out.push((name.clone(), summary));
        }
        Ok(out)
    }

    pub fn load_organ(&self, fold: usize, class: &str) -> Result<(BinaryNet<f32>, TrainSummary)> {
        self.manifest()?.require(&self.out, &mf::key_organ(fold, class), &self.cfg, Stage::Organ)?;
        let mut net = BinaryNet::<f32>::new(self.cfg.organ.net.clone(), 0)?;
        checkpoint::load(net.params_mut(), &self.organ_ckpt(fold, class))?;
        let summary = read_json(&self.fold_dir(fold).join(format!("organ_{class}.json")))?;
        Ok((net, summary))
    }

    /// Stage-1 metrics of one patient, straight from the prediction files.
    pub fn stage1_patient(&self, fold: usize, p: &PatientData) -> Result<Vec<ClassMetrics>> {
        let pred = self.load_prediction(fold, &p.meta.patient)?;
        self.score(&pred, p)
    }

    fn score(&self, pred: &LabelVolume, p: &PatientData) -> Result<Vec<ClassMetrics>> {
        self.cfg
            .data
            .classes
            .iter()
            .enumerate()
            .map(|(i, name)| Ok(evaluate_class(pred, &p.labels, i as u8 + 1, name, p.meta.pixdim_f64(), self.cfg.eval.mode)?))
            .collect()
    }

    /// Combined stage-2 label volume for one test patient.
    pub fn stage2_patient(&self, nets: &mut [(BinaryNet<f32>, RoiManifest)], p: &PatientData) -> Result<LabelVolume> {
        let dims = p.intensity.dims;
        let mut masks = Vec::new();
        let mut probs = Vec::new();
        let empty = Volume::filled(dims, 0u8);
        for (net, rm) in nets.iter_mut() {
            let mut mask = Volume::filled(dims, 0u8);
            let mut prob = Volume::filled(dims, 0.0f32);
            let entry = rm
                .entries
                .iter()
                .find(|e| e.patient == p.meta.patient)
                .ok_or_else(|| Error::Invalid(format!("no ROI entry for `{}` in class `{}`", p.meta.patient, rm.class)))?;
            if entry.role != Role::Test {
                return Err(Error::Leakage(format!("`{}` is not a test patient of this fold", p.meta.patient)));
            }
            if let Some(b) = &entry.bbox {
                let set = extract_roi(&p.intensity, &empty, b, rm.label, rm.target, rm.axis, &p.meta.patient)?;
                let patch_probs = predict(net, &samples_from_roi(&set), PREDICT_BATCH)?;
                map_back_roi(&patch_probs, rm.target, b, self.cfg.organ.threshold, &mut mask, &mut prob)?;
            }
            masks.push(mask.data);
            probs.push(prob.data);
        }
        Ok(Volume { dims, data: combine_binary(&masks, &probs) })
    }

    pub fn evaluate(&self, fold: usize) -> Result<FoldEval> {
        let f = self.fold(fold)?;
        self.manifest()?.require(&self.out, &mf::key_pred(fold), &self.cfg, Stage::Coarse)?;
        let test: BTreeSet<&String> = f.test.iter().collect();
        let mut nets = Vec::new();
        for name in &self.cfg.data.classes {
            let (net, summary) = self.load_organ(fold, name)?;
            if let Some(p) = summary.train_patients.iter().chain(&summary.val_patients).find(|p| test.contains(p)) {
                return Err(Error::Leakage(format!("test patient `{p}` was used to train the `{name}` model of fold {fold}")));
            }
            let rm = self.roi_manifest(fold, name)?;
            Self::check_roi_roles(&rm, &f)?;
            nets.push((net, rm));
        }
        let n = self.cfg.n_classes();
        let mut s1: Vec<Vec<ClassMetrics>> = vec![Vec::new(); n];
        let mut s2: Vec<Vec<ClassMetrics>> = vec![Vec::new(); n];
        for id in &f.test {
            let p = load_patient(&self.out, id)?;
            for (c, m) in self.stage1_patient(fold, &p)?.into_iter().enumerate() {
                s1[c].push(m);
            }
            let combined = self.stage2_patient(&mut nets, &p)?;
            let dir = self.stage2_dir(fold, id);
            let (w, h) = (p.meta.width, p.meta.height);
            for (i, plane) in extract_planes(&combined, CORONAL)?.into_iter().enumerate() {
                write_if_changed(&dir.join(slice_file(i)), &encode_mask_png(&LabelMask { width: w, height: h, labels: plane })?)?;
            }
            for (c, m) in self.score(&combined, &p)?.into_iter().enumerate() {
                s2[c].push(m);
            }
        }
        let mean = |runs: &[Vec<ClassMetrics>]| runs.iter().map(|r| mean_class_metrics(r)).collect::<std::result::Result<Vec<_>, _>>();
        let ev = FoldEval {
            fold,
            patients: f.test.clone(),
            stage1: aggregate("stage1", Some(fold), mean(&s1)?)?,
            stage2: aggregate("stage2", Some(fold), mean(&s2)?)?,
        };
        let path = self.fold_dir(fold).join("eval.json");
        write_json(&path, &ev)?;
        self.record(mf::key_eval(fold), Stage::Evaluate, &[path])?;
        Ok(ev)
    }

    pub fn report(&self) -> Result<Report> {
        let plan = self.fold_plan()?;
        let m = self.manifest()?;
        let mut evals = Vec::new();
        for fold in 0..plan.k {
            let key = mf::key_eval(fold);
            if m.artifacts.contains_key(&key) {
                m.require(&self.out, &key, &self.cfg, Stage::Evaluate)?;
                evals.push(read_json::<FoldEval>(&self.fold_dir(fold).join("eval.json"))?);
            }
        }
        if evals.is_empty() {
            m.require(&self.out, &mf::key_eval(0), &self.cfg, Stage::Evaluate)?;
        }
        let n = self.cfg.n_classes();
        let across = |pick: fn(&FoldEval) -> &MetricsReport| -> Result<Vec<ClassMetrics>> {
            (0..n)
                .map(|c| Ok(mean_class_metrics(&evals.iter().map(|e| pick(e).classes[c].clone()).collect::<Vec<_>>())?))
                .collect()
        };
        let stage1 = aggregate("stage1", None, across(|e| &e.stage1)?)?;
        let stage2 = aggregate("stage2", None, across(|e| &e.stage2)?)?;
        let folds: Vec<usize> = evals.iter().map(|e| e.fold).collect();
        let table = render_comparison(&stage1, &stage2)?;
        let text = format!(
            "Folds evaluated: {folds:?} ({:?} mode)\n\nStage 1 (multiclass)\n{}\nStage 2 (organ-wise)\n{}\nStage 1 -> stage 2\n{}",
            self.cfg.eval.mode,
            render_table(&stage1),
            render_table(&stage2),
            table
        );
        let report = Report { folds, stage1, stage2, table };
        let json = self.out.join("report.json");
        let txt = self.out.join("report.txt");
        write_json(&json, &report)?;
        write_if_changed(&txt, text.as_bytes())?;
        self.record(mf::key_report(), Stage::Evaluate, &[json, txt])?;
        Ok(report)
    }

    /// Every stage for the given folds (all folds when `None`).
    pub fn run_all(&self, folds: Option<&[usize]>) -> Result<Report> {
        if self.cfg.phantom.is_some() && self.cfg.data.raw_root.is_none() {
            self.phantom()?;
        }
        self.convert()?;
        let plan = self.split()?;
        let folds: Vec<usize> = folds.map(<[usize]>::to_vec).unwrap_or_else(|| (0..plan.k).collect());
        for &fold in &folds {
            self.train_coarse(fold)?;
            self.predict_coarse(fold)?;
            self.extract_roi(fold, None)?;
            self.train_organ(fold, None)?;
            self.evaluate(fold)?;
        }
        self.report()
    }
}
