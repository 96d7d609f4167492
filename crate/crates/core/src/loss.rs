//! Training losses. Each is a single fused node on the tape.

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Smoothing constant for the region losses.
pub const REGION_EPS: f64 = 1e-6;

/// Class-weighted pixel cross-entropy on softmax probabilities:
/// `-(1/P) * sum_p weights[t_p] * ln(p[t_p] + 1e-12)`.
///
/// `labels` holds one class index per pixel in `(n, h, w)` order.
pub fn weighted_cross_entropy<T: Scalar>(tape: &mut Tape<T>, probs: Var, labels: &[u8], weights: &[f64]) -> Result<Var> {
    tape.weighted_ce(
        probs,
        labels.iter().map(|&l| l as usize).collect(),
        weights.iter().map(|&w| T::lit(w)).collect(),
    )
}

fn binary_target<T: Scalar>(target: &[u8]) -> Result<Vec<T>> {
    target
        .iter()
        .map(|&v| match v {
            0 => Ok(T::zero()),
            1 => Ok(T::one()),
            other => Err(invalid("region loss", format!("binary target holds value {other}"))),
        })
        .collect()
}

/// `1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps)`
pub fn dice_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: &[u8], eps: f64) -> Result<Var> {
    let t = binary_target(target)?;
    tape.dice(pred, t, T::lit(eps))
}

/// `1 - (sum(p*y) + eps) / (sum(p + y - p*y) + eps)`
pub fn jaccard_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: &[u8], eps: f64) -> Result<Var> {
    let t = binary_target(target)?;
    tape.jaccard(pred, t, T::lit(eps))
}

/// Mean of the Dice and Jaccard losses.
pub fn composite_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: &[u8]) -> Result<Var> {
    let d = dice_loss(tape, pred, target, REGION_EPS)?;
    let j = jaccard_loss(tape, pred, target, REGION_EPS)?;
    let s = tape.add(d, j)?;
    Ok(tape.scale(s, T::lit(0.5)))
}

/// Loss selector used by the training loop.
#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    /// Multiclass: softmax probabilities against label maps.
    WeightedCe { weights: Vec<f64> },
    /// Binary: sigmoid probabilities against 0/1 masks.
    Composite,
}

impl LossKind {
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, output: Var, target: &[u8]) -> Result<Var> {
        match self {
            LossKind::WeightedCe { weights } => weighted_cross_entropy(tape, output, target, weights),
            LossKind::Composite => composite_loss(tape, output, target),
        }
    }
}
