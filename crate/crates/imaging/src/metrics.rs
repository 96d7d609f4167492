//! Overlap and boundary metrics with per-class aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::volume::{extract_planes, LabelMask, LabelVolume, CORONAL};

/// Boolean 2D or 3D mask, row-major (last axis fastest), with spacing per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub dims: Vec<usize>,
    pub data: Vec<bool>,
    pub spacing: Vec<f64>,
}

impl BinaryMask {
    pub fn new(dims: Vec<usize>, data: Vec<bool>, spacing: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) || dims.iter().any(|&d| d == 0) {
            return Err(invalid("mask", format!("dims {dims:?} must be 2 or 3 positive extents")));
        }
        if data.len() != dims.iter().product::<usize>() {
            return Err(shape("mask", format!("{} values for dims {dims:?}", data.len())));
        }
        if spacing.len() != dims.len() || spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(invalid("mask", format!("spacing {spacing:?} must be positive per axis")));
        }
        Ok(Self { dims, data, spacing })
    }

    pub fn unit(dims: Vec<usize>, data: Vec<bool>) -> Result<Self> {
        let n = dims.len();
        Self::new(dims, data, vec![1.0; n])
    }

    /// Pixels equal to `class`; `spacing` is `(row, column)` in mm.
    pub fn from_mask(m: &LabelMask, class: u8, spacing: (f64, f64)) -> Result<Self> {
        Self::new(vec![m.height, m.width], m.labels.iter().map(|&l| l == class).collect(), vec![spacing.0, spacing.1])
    }

    /// Voxels equal to `class`; `pixdim` is `[x, y, z]` spacing.
    pub fn from_volume(v: &LabelVolume, class: u8, pixdim: [f64; 3]) -> Result<Self> {
        let [nx, ny, nz] = v.dims;
        Self::new(vec![nz, ny, nx], v.data.iter().map(|&l| l == class).collect(), vec![pixdim[2], pixdim[1], pixdim[0]])
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    fn coords(&self, mut i: usize) -> Vec<usize> {
        let mut c = vec![0; self.dims.len()];
        for a in (0..self.dims.len()).rev() {
            c[a] = i % self.dims[a];
            i /= self.dims[a];
        }
        c
    }
}

fn same_dims(p: &BinaryMask, g: &BinaryMask, op: &'static str) -> Result<()> {
    if p.dims != g.dims {
        return Err(shape(op, format!("{:?} vs {:?}", p.dims, g.dims)));
    }
    Ok(())
}

fn overlap(p: &BinaryMask, g: &BinaryMask) -> (u64, u64, u64) {
    let (mut inter, mut np, mut ng) = (0u64, 0u64, 0u64);
    for (&a, &b) in p.data.iter().zip(&g.data) {
        inter += (a && b) as u64;
        np += a as u64;
        ng += b as u64;
    }
    (inter, np, ng)
}

/// `2|P∩G| / (|P| + |G|)`; two empty masks score 1.
pub fn dsc(p: &BinaryMask, g: &BinaryMask) -> Result<f64> {
    same_dims(p, g, "dsc")?;
    let (i, np, ng) = overlap(p, g);
    Ok(if np + ng == 0 { 1.0 } else { 2.0 * i as f64 / (np + ng) as f64 })
}

/// `|P∩G| / |P∪G|`; two empty masks score 1.
pub fn iou(p: &BinaryMask, g: &BinaryMask) -> Result<f64> {
    same_dims(p, g, "iou")?;
    let (i, np, ng) = overlap(p, g);
    let union = np + ng - i;
    Ok(if union == 0 { 1.0 } else { i as f64 / union as f64 })
}

/// Foreground elements with at least one background face neighbour
/// (4-neighbourhood in 2D, 6 in 3D); outside the grid counts as background.
pub fn surface_points(m: &BinaryMask) -> Vec<Vec<usize>> {
    let nd = m.dims.len();
    let mut strides = vec![1usize; nd];
    for a in (0..nd - 1).rev() {
        strides[a] = strides[a + 1] * m.dims[a + 1];
    }
    let mut out = Vec::new();
    for (i, &on) in m.data.iter().enumerate() {
        if !on {
            continue;
        }
        let c = m.coords(i);
        let boundary = (0..nd).any(|a| {
            c[a] == 0 || c[a] + 1 == m.dims[a] || !m.data[i - strides[a]] || !m.data[i + strides[a]]
        });
        if boundary {
            out.push(c);
        }
    }
    out
}

/// Squared physical distance, summed over axes in order.
#[inline]
pub fn dist2(a: &[usize], b: &[usize], spacing: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let d = (a[k] as f64 - b[k] as f64) * spacing[k];
        s += d * d;
    }
    s
}

/// Nearest-rank percentile: the `ceil(q/100 * n)`-th smallest value.
pub fn nearest_rank(sorted: &[f64], q: usize) -> f64 {
    let n = sorted.len();
    let rank = ((q * n + 99) / 100).max(1);
    sorted[rank - 1]
}

/// Surface points of `to` grouped by all but the last coordinate, each group
/// holding its sorted last coordinates.
struct Index {
    groups: Vec<(Vec<usize>, Vec<usize>)>,
}

impl Index {
    fn new(points: &[Vec<usize>]) -> Self {
        let mut pts: Vec<&Vec<usize>> = points.iter().collect();
        pts.sort();
        let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
        for p in pts {
            let (lead, last) = p.split_at(p.len() - 1);
            match groups.last_mut() {
                Some((l, v)) if l.as_slice() == lead => v.push(last[0]),
                _ => groups.push((lead.to_vec(), vec![last[0]])),
            }
        }
        Self { groups }
    }

    /// Minimum of [`dist2`] from `q` over all indexed points.
    fn nearest2(&self, q: &[usize], spacing: &[f64]) -> f64 {
        let nd = q.len();
        let mut best = f64::INFINITY;
        let mut cand = vec![0usize; nd];
        for (lead, lasts) in &self.groups {
            let lead2 = dist2(&q[..nd - 1], lead, &spacing[..nd - 1]);
            if lead2 >= best {
                continue;
            }
            cand[..nd - 1].copy_from_slice(lead);
            let at = lasts.partition_point(|&v| v < q[nd - 1]);
            for j in [at.wrapping_sub(1), at] {
                if let Some(&v) = lasts.get(j) {
                    cand[nd - 1] = v;
                    best = best.min(dist2(q, &cand, spacing));
                }
            }
        }
        best
    }
}

/// Sorted directed distances from every surface point of `from` to the
/// surface of `to`.
pub fn directed_distances(from: &[Vec<usize>], to: &[Vec<usize>], spacing: &[f64]) -> Vec<f64> {
    let index = Index::new(to);
    let mut d: Vec<f64> = from.iter().map(|p| index.nearest2(p, spacing).sqrt()).collect();
    d.sort_by(f64::total_cmp);
    d
}

/// Symmetric 95th-percentile surface distance in mm; `None` when either
/// mask is empty.
pub fn hd95(p: &BinaryMask, g: &BinaryMask) -> Result<Option<f64>> {
    same_dims(p, g, "hd95")?;
    if p.spacing != g.spacing {
        return Err(invalid("hd95", "masks carry different spacings"));
    }
    let (sp, sg) = (surface_points(p), surface_points(g));
    if sp.is_empty() || sg.is_empty() {
        return Ok(None);
    }
    let a = nearest_rank(&directed_distances(&sp, &sg, &p.spacing), 95);
    let b = nearest_rank(&directed_distances(&sg, &sp, &p.spacing), 95);
    Ok(Some(a.max(b)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u8,
    pub name: String,
    pub dsc: f64,
    pub iou: f64,
    /// `None` prints as "--".
    pub hd95: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Per coronal slice, averaged over slices where the class appears in
    /// either mask.
    #[default]
    Slice,
    /// Whole volume at once.
    Volume,
}

/// Metrics for one class of one patient.
pub fn evaluate_class(pred: &LabelVolume, gt: &LabelVolume, class: u8, name: &str, pixdim: [f64; 3], mode: EvalMode) -> Result<ClassMetrics> {
    if pred.dims != gt.dims {
        return Err(shape("evaluate", format!("prediction {:?} vs ground truth {:?}", pred.dims, gt.dims)));
    }
    match mode {
        EvalMode::Volume => {
            let p = BinaryMask::from_volume(pred, class, pixdim)?;
            let g = BinaryMask::from_volume(gt, class, pixdim)?;
            Ok(ClassMetrics { class, name: name.into(), dsc: dsc(&p, &g)?, iou: iou(&p, &g)?, hd95: hd95(&p, &g)? })
        }
        EvalMode::Slice => {
            let [nx, _, nz] = pred.dims;
            let spacing = (pixdim[2], pixdim[0]);
            let (mut sd, mut si, mut sh, mut n, mut nh) = (0.0, 0.0, 0.0, 0usize, 0usize);
            for (pp, gp) in extract_planes(pred, CORONAL)?.into_iter().zip(extract_planes(gt, CORONAL)?) {
                let pm = BinaryMask::from_mask(&LabelMask { width: nx, height: nz, labels: pp }, class, spacing)?;
                let gm = BinaryMask::from_mask(&LabelMask { width: nx, height: nz, labels: gp }, class, spacing)?;
                if pm.count() + gm.count() == 0 {
                    continue;
                }
                sd += dsc(&pm, &gm)?;
                si += iou(&pm, &gm)?;
                n += 1;
                if let Some(h) = hd95(&pm, &gm)? {
                    sh += h;
                    nh += 1;
                }
            }
            if n == 0 {
                return Ok(ClassMetrics { class, name: name.into(), dsc: 1.0, iou: 1.0, hd95: None });
            }
            Ok(ClassMetrics {
                class,
                name: name.into(),
                dsc: sd / n as f64,
                iou: si / n as f64,
                hd95: (nh > 0).then(|| sh / nh as f64),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub stage: String,
    pub fold: Option<usize>,
    pub classes: Vec<ClassMetrics>,
    pub mdsc: f64,
    pub miou: f64,
    pub mhd95: Option<f64>,
    pub undefined_hd95: usize,
}

/// Arithmetic means over classes; undefined HD95 entries are skipped and counted.
pub fn aggregate(stage: &str, fold: Option<usize>, classes: Vec<ClassMetrics>) -> Result<MetricsReport> {
    if classes.is_empty() {
        return Err(invalid("aggregate", "no class results"));
    }
    let n = classes.len() as f64;
    let mdsc = classes.iter().map(|c| c.dsc).sum::<f64>() / n;
    let miou = classes.iter().map(|c| c.iou).sum::<f64>() / n;
    let defined: Vec<f64> = classes.iter().filter_map(|c| c.hd95).collect();
    let mhd95 = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(MetricsReport { stage: stage.into(), fold, undefined_hd95: classes.len() - defined.len(), classes, mdsc, miou, mhd95 })
}

/// Mean of each class's metrics across patients (or folds): DSC and IoU over
/// all entries, HD95 over defined entries.
pub fn mean_class_metrics(runs: &[ClassMetrics]) -> Result<ClassMetrics> {
    let first = runs.first().ok_or_else(|| invalid("mean metrics", "no entries"))?;
    let n = runs.len() as f64;
    let hs: Vec<f64> = runs.iter().filter_map(|c| c.hd95).collect();
    Ok(ClassMetrics {
        class: first.class,
        name: first.name.clone(),
        dsc: runs.iter().map(|c| c.dsc).sum::<f64>() / n,
        iou: runs.iter().map(|c| c.iou).sum::<f64>() / n,
        hd95: (!hs.is_empty()).then(|| hs.iter().sum::<f64>() / hs.len() as f64),
    })
}

fn fmt_hd(h: Option<f64>) -> String {
    h.map(|v| format!("{v:.2}")).unwrap_or_else(|| "--".into())
}

pub fn render_table(r: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<18} {:>8} {:>8} {:>10}", "Class", "DSC", "IoU", "HD95(mm)");
    for c in &r.classes {
        let _ = writeln!(s, "{:<18} {:>8.4} {:>8.4} {:>10}", c.name, c.dsc, c.iou, fmt_hd(c.hd95));
    }
    let _ = writeln!(s, "{:<18} {:>8.4} {:>8.4} {:>10}", "Mean", r.mdsc, r.miou, fmt_hd(r.mhd95));
    s
}

/// Stage-over-stage table with delta columns (second minus first).
pub fn render_comparison(first: &MetricsReport, second: &MetricsReport) -> Result<String> {
    if first.classes.iter().map(|c| c.class).ne(second.classes.iter().map(|c| c.class)) {
        return Err(invalid("report", "stage reports cover different classes"));
    }
    let delta = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => format!("{:+.2}", b - a),
        _ => "--".into(),
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<18} {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8} | {:>10} {:>10} {:>8}",
        "Class", "DSC-1", "DSC-2", "dDSC", "IoU-1", "IoU-2", "dIoU", "HD95-1", "HD95-2", "dHD95"
    );
    let rows = first
        .classes
        .iter()
        .zip(&second.classes)
        .map(|(a, b)| (a.name.as_str(), a.dsc, b.dsc, a.iou, b.iou, a.hd95, b.hd95))
        .chain(std::iter::once(("Mean", first.mdsc, second.mdsc, first.miou, second.miou, first.mhd95, second.mhd95)));
    for (name, d1, d2, i1, i2, h1, h2) in rows {
        let _ = writeln!(
            s,
            "{:<18} {:>8.4} {:>8.4} {:>+8.4} | {:>8.4} {:>8.4} {:>+8.4} | {:>10} {:>10} {:>8}",
            name,
            d1,
            d2,
            d2 - d1,
            i1,
            i2,
            i2 - i1,
            fmt_hd(h1),
            fmt_hd(h2),
            delta(h1, h2)
        );
    }
    Ok(s)
}
