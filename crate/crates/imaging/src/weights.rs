//! Inverse-frequency class weights.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::volume::{LabelMask, CLASS_NAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    pub pixel_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub n_classes: usize,
    /// `(class, factor)` multiplied in after the inverse-frequency weights.
    pub boost: Option<(usize, f64)>,
    /// Classes allowed to have no pixels at all.
    pub allow_absent: Vec<usize>,
}

fn class_name(c: usize) -> String {
    CLASS_NAMES.get(c).map(|s| s.to_string()).unwrap_or_else(|| format!("class {c}"))
}

/// `total / (C * count_c)`, boost, then rescale to unit mean.
///
/// An allowed-absent class takes the largest weight among present classes
/// before boosting.
pub fn compute_class_weights(masks: &[LabelMask], scheme: &WeightScheme) -> Result<ClassWeights> {
    if masks.is_empty() {
        return Err(invalid("class weights", "no masks"));
    }
    let c = scheme.n_classes;
    if c == 0 {
        return Err(invalid("class weights", "zero classes"));
    }
    let mut counts = vec![0u64; c];
    for m in masks {
        for &l in &m.labels {
            let l = l as usize;
            if l >= c {
                return Err(invalid("class weights", format!("label {l} outside {c} classes")));
            }
            counts[l] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let mut weights = vec![0.0; c];
    for k in 0..c {
        if counts[k] > 0 {
            weights[k] = total as f64 / (c as f64 * counts[k] as f64);
        } else if !scheme.allow_absent.contains(&k) {
            return Err(Error::AbsentClass(class_name(k)));
        }
    }
    let fill = weights.iter().cloned().fold(0.0, f64::max);
    if fill == 0.0 {
        return Err(invalid("class weights", "every class is absent"));
    }
    weights.iter_mut().zip(&counts).filter(|(_, &n)| n == 0).for_each(|(w, _)| *w = fill);
    if let Some((class, factor)) = scheme.boost {
        if class >= c || !(factor > 0.0) {
            return Err(invalid("class weights", format!("boost ({class}, {factor}) is not a positive factor on a valid class")));
        }
        weights[class] *= factor;
    }
    let mean = weights.iter().sum::<f64>() / c as f64;
    weights.iter_mut().for_each(|w| *w /= mean);
    Ok(ClassWeights { weights, pixel_counts: counts })
}
