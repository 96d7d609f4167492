mod common;

use common::*;
use enteroseg_core::loss::{composite_loss, dice_loss, jaccard_loss, weighted_cross_entropy, REGION_EPS};
use enteroseg_core::{Tape64, Tensor};
use proptest::prelude::*;

fn value(t: &Tape64, v: enteroseg_core::Var) -> f64 {
    t.value(v).data()[0]
}

fn probs_var(t: &mut Tape64, c: usize, h: usize, w: usize, data: &[f64]) -> enteroseg_core::Var {
    t.constant(Tensor::from_f64(&[1, c, h, w], data).unwrap())
}

fn mask_pred(t: &mut Tape64, m: &[u8]) -> enteroseg_core::Var {
    t.constant(Tensor::from_f64(&[1, 1, 1, m.len()], &m.iter().map(|&v| v as f64).collect::<Vec<_>>()).unwrap())
}

#[test]
fn ce_perfect_prediction() {
    let mut t = Tape64::new();
    let p = probs_var(&mut t, 3, 1, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let l = weighted_cross_entropy(&mut t, p, &[0, 1, 2], &[1.0, 2.0, 7.0]).unwrap();
    assert!(value(&t, l) <= 1e-6);
}

#[test]
fn ce_uniform_over_eleven_classes() {
    let mut t = Tape64::new();
    let p = t.constant(Tensor::full(&[2, 11, 3, 3], 1.0 / 11.0));
    let labels: Vec<u8> = (0..18).map(|i| (i % 11) as u8).collect();
    let l = weighted_cross_entropy(&mut t, p, &labels, &[1.0; 11]).unwrap();
    assert!((value(&t, l) - 11f64.ln()).abs() <= 1e-6);
    assert!((11f64.ln() - 2.3979).abs() < 1e-4);
}

#[test]
fn ce_weighted_hand_case() {
    // pixel 0: class 0 with p=0.5; pixel 1: class 1 with p=0.25
    let mut t = Tape64::new();
    let p = probs_var(&mut t, 2, 1, 2, &[0.5, 0.75, 0.5, 0.25]);
    let l = weighted_cross_entropy(&mut t, p, &[0, 1], &[1.0, 7.0]).unwrap();
    let want = (2f64.ln() + 7.0 * 4f64.ln()) / 2.0;
    assert!((value(&t, l) - want).abs() <= 1e-9);
}

#[test]
fn ce_equal_weights_scale_loss() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let logits = random(&[2, 4, 3, 3], -2.0, 2.0, &mut r);
        let labels: Vec<u8> = (0..18).map(|i| ((i * 7 + seed as usize) % 4) as u8).collect();
        let mut t = Tape64::new();
        let x = t.constant(logits);
        let p = t.softmax_channels(x).unwrap();
        let base = weighted_cross_entropy(&mut t, p, &labels, &[1.0; 4]).unwrap();
        let scaled = weighted_cross_entropy(&mut t, p, &labels, &[3.5; 4]).unwrap();
        assert!((value(&t, scaled) - 3.5 * value(&t, base)).abs() <= 1e-12 * value(&t, scaled).abs().max(1.0));
    }
}

#[test]
fn dice_hand_cases() {
    let mut t = Tape64::new();
    let m = [1, 0, 1, 1, 0, 0, 1];
    let p = mask_pred(&mut t, &m);
    let l = dice_loss(&mut t, p, &m, REGION_EPS).unwrap();
    assert!(value(&t, l) <= 1e-9);

    let zero = mask_pred(&mut t, &[0; 7]);
    let l = dice_loss(&mut t, zero, &m, REGION_EPS).unwrap();
    let want = 1.0 - REGION_EPS / (4.0 + REGION_EPS);
    assert!((value(&t, l) - want).abs() <= 1e-15);

    let n = 64;
    let half = t.constant(Tensor::full(&[1, 1, 8, 8], 0.5));
    let target: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let l = dice_loss(&mut t, half, &target, REGION_EPS).unwrap();
    let want = 1.0 - (2.0 * 16.0 + REGION_EPS) / (32.0 + 32.0 + REGION_EPS);
    assert!((value(&t, l) - want).abs() <= 1e-15);
    assert!((value(&t, l) - 0.5).abs() <= 1e-6);
}

/// |P| = 4, |G| = 4, |P ∩ G| = 2, |P ∪ G| = 6
const P6: [u8; 8] = [1, 1, 1, 1, 0, 0, 0, 0];
const G6: [u8; 8] = [0, 0, 1, 1, 1, 1, 0, 0];
/// |P| = 4, |G| = 6, |P ∩ G| = 2, |P| + |G| = 10
const P10: [u8; 8] = [1, 1, 1, 1, 0, 0, 0, 0];
const G10: [u8; 8] = [0, 0, 1, 1, 1, 1, 1, 1];

#[test]
fn jaccard_hand_cases() {
    let mut t = Tape64::new();
    let same = mask_pred(&mut t, &G6);
    let l = jaccard_loss(&mut t, same, &G6, REGION_EPS).unwrap();
    assert!(value(&t, l) <= 1e-9);

    let disjoint = mask_pred(&mut t, &[1, 1, 0, 0, 0, 0, 0, 0]);
    let l = jaccard_loss(&mut t, disjoint, &[0, 0, 1, 1, 0, 0, 0, 0], REGION_EPS).unwrap();
    assert!((value(&t, l) - 1.0).abs() <= 1e-6);

    let p = mask_pred(&mut t, &P6);
    let exact = jaccard_loss(&mut t, p, &G6, 0.0).unwrap();
    assert!((value(&t, exact) - 2.0 / 3.0).abs() <= 1e-9);
    let smoothed = jaccard_loss(&mut t, p, &G6, REGION_EPS).unwrap();
    assert!((value(&t, smoothed) - (1.0 - (2.0 + REGION_EPS) / (6.0 + REGION_EPS))).abs() <= 1e-15);
}

#[test]
fn dice_overlap_cases() {
    let mut t = Tape64::new();
    let p = mask_pred(&mut t, &P10);
    let l = dice_loss(&mut t, p, &G10, 0.0).unwrap();
    assert!((value(&t, l) - 0.6).abs() <= 1e-9);
    // the union-6 pair: 2*2 / (4 + 4)
    let p = mask_pred(&mut t, &P6);
    let l = dice_loss(&mut t, p, &G6, 0.0).unwrap();
    assert!((value(&t, l) - 0.5).abs() <= 1e-9);
}

#[test]
fn composite_cases() {
    let mut t = Tape64::new();
    let same = mask_pred(&mut t, &G6);
    let l = composite_loss(&mut t, same, &G6).unwrap();
    assert!(value(&t, l) <= 1e-9);
    let a = mask_pred(&mut t, &[1, 1, 0, 0]);
    let l = composite_loss(&mut t, a, &[0, 0, 1, 1]).unwrap();
    assert!((value(&t, l) - 1.0).abs() <= 1e-6);

    let p = mask_pred(&mut t, &P6);
    let c = composite_loss(&mut t, p, &G6).unwrap();
    let d = dice_loss(&mut t, p, &G6, REGION_EPS).unwrap();
    let j = jaccard_loss(&mut t, p, &G6, REGION_EPS).unwrap();
    assert!((value(&t, c) - (value(&t, d) + value(&t, j)) / 2.0).abs() <= 1e-12);
    assert!((value(&t, c) - (0.5 + 2.0 / 3.0) / 2.0).abs() <= 1e-6);
}

proptest! {
    #[test]
    fn region_loss_properties(
        pairs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..64),
        perm_seed in any::<u64>(),
    ) {
        let pred: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let target: Vec<u8> = pairs.iter().map(|p| p.1 as u8).collect();
        let n = pred.len();
        let mut t = Tape64::new();
        let p = t.constant(Tensor::from_f64(&[1, 1, 1, n], &pred).unwrap());
        let d = dice_loss(&mut t, p, &target, REGION_EPS).unwrap();
        let j = jaccard_loss(&mut t, p, &target, REGION_EPS).unwrap();
        let c = composite_loss(&mut t, p, &target).unwrap();
        let (dv, jv, cv) = (value(&t, d), value(&t, j), value(&t, c));
        prop_assert!(dv <= jv + 1e-12);
        prop_assert!((cv - (dv + jv) / 2.0).abs() <= 1e-12);

        // permutation invariance
        let mut idx: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        idx.shuffle(&mut rng(perm_seed));
        let pp: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
        let tp: Vec<u8> = idx.iter().map(|&i| target[i]).collect();
        let p2 = t.constant(Tensor::from_f64(&[1, 1, 1, n], &pp).unwrap());
        let d2 = dice_loss(&mut t, p2, &tp, REGION_EPS).unwrap();
        let j2 = jaccard_loss(&mut t, p2, &tp, REGION_EPS).unwrap();
        prop_assert!((value(&t, d2) - dv).abs() <= 1e-12);
        prop_assert!((value(&t, j2) - jv).abs() <= 1e-12);
    }
}
