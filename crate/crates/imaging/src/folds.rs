//! Patient-wise k-fold planning with a rotating test set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub version: u32,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

pub const VAL_FRACTION: f64 = 0.1;

/// Validation size near `n / 10`, rounded in whichever direction keeps the
/// training share within one patient of 70%.
fn val_count(n: usize, n_test: usize) -> usize {
    let target = VAL_FRACTION * n as f64;
    let test_excess = n_test as f64 - 0.2 * n as f64;
    let v = if test_excess > 0.0 { target.floor() } else { target.ceil() } as usize;
    v.min(n - n_test - 1)
}

pub fn stratified_kfold(patients: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(invalid("kfold", format!("k = {k}; need at least 2 folds")));
    }
    if patients.len() < k {
        return Err(invalid("kfold", format!("{} patients cannot fill {k} test folds", patients.len())));
    }
    let mut sorted = patients.to_vec();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid("kfold", "duplicate patient ids"));
    }
    let n = sorted.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = sorted;
    order.shuffle(&mut rng);

    // Near-equal contiguous chunks of the shuffled order are the test sets.
    let bounds: Vec<usize> = (0..=k).map(|f| f * n / k).collect();
    let folds = (0..k)
        .map(|f| {
            let test: Vec<String> = order[bounds[f]..bounds[f + 1]].to_vec();
            let mut rest: Vec<String> = order[..bounds[f]].iter().chain(&order[bounds[f + 1]..]).cloned().collect();
            let mut fold_rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(f as u64 + 1)));
            rest.shuffle(&mut fold_rng);
            let v = val_count(n, test.len());
            let mut val = rest[..v].to_vec();
            let mut train = rest[v..].to_vec();
            let mut test = test;
            train.sort();
            val.sort();
            test.sort();
            Fold { train, val, test }
        })
        .collect();
    Ok(FoldPlan { version: 1, k, seed, folds })
}
