use enteroseg_imaging::resample::*;
use enteroseg_imaging::volume::{GrayscaleSlice, LabelMask};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn slice(w: usize, h: usize, px: Vec<f32>) -> GrayscaleSlice {
    GrayscaleSlice::new(w, h, px).unwrap()
}

fn stats(p: &[f32]) -> (f64, f64) {
    let n = p.len() as f64;
    let m = p.iter().map(|&v| v as f64).sum::<f64>() / n;
    (m, (p.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n).sqrt())
}

#[test]
fn constant_slice_normalizes_to_zero() {
    let out = normalize_slice(&slice(3, 3, vec![0.1; 9]));
    assert!(out.normalized);
    assert!(out.pixels.iter().all(|&p| p == 0.0));
}

#[test]
fn two_pixel_slice() {
    assert_eq!(normalize_slice(&slice(2, 1, vec![0.0, 2.0])).pixels, vec![-1.0, 1.0]);
}

#[test]
fn random_slice_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let px: Vec<f32> = (0..32 * 24).map(|_| rng.gen_range(-50.0..400.0)).collect();
        let (m, sd) = stats(&normalize_slice(&slice(32, 24, px)).pixels);
        assert!(m.abs() <= 1e-5, "mean {m}");
        assert!((0.999..=1.001).contains(&sd), "sd {sd}");
    }
}

#[test]
fn same_size_resize_is_identity() {
    let s = slice(3, 2, vec![1.0, 2.5, -3.0, 4.0, 5.0, 6.0]);
    assert_eq!(resize_image(&s, 3, 2, Interp::Bilinear).unwrap().pixels, s.pixels);
    let m = LabelMask::new(3, 2, vec![0, 1, 2, 3, 4, 5]).unwrap();
    assert_eq!(resize_mask(&m, 3, 2, Interp::Nearest).unwrap(), m);
}

#[test]
fn nearest_mask_upscale() {
    let m = LabelMask::new(2, 2, vec![1, 1, 2, 2]).unwrap();
    let r = resize_mask(&m, 4, 4, Interp::Nearest).unwrap();
    assert_eq!(r.labels, vec![1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2]);
    assert_eq!(r.label_set(), vec![1, 2]);
}

#[test]
fn bilinear_constant_stays_constant() {
    let r = resize_image(&slice(3, 5, vec![2.5; 15]), 7, 4, Interp::Bilinear).unwrap();
    assert!(r.pixels.iter().all(|&p| (p - 2.5).abs() < 1e-6));
}

#[test]
fn bilinear_upscale_interpolates() {
    // align-corners-false taps for 2 -> 4: 0, 0.25, 0.75, 1
    let r = resize_image(&slice(2, 1, vec![0.0, 4.0]), 4, 1, Interp::Bilinear).unwrap();
    assert_eq!(r.pixels, vec![0.0, 1.0, 3.0, 4.0]);
}

#[test]
fn bilinear_mask_resize_is_rejected() {
    let m = LabelMask::new(2, 2, vec![1, 1, 2, 2]).unwrap();
    assert!(resize_mask(&m, 4, 4, Interp::Bilinear).is_err());
    assert!(resize_mask(&m, 0, 4, Interp::Nearest).is_err());
}

proptest! {
    #[test]
    fn normalization_is_idempotent(px in prop::collection::vec(-1000.0f32..1000.0, 4..200)) {
        prop_assume!(px.iter().any(|&p| p != px[0]));
        let n = px.len();
        let once = normalize_slice(&slice(n, 1, px));
        let twice = normalize_slice(&once);
        for (a, b) in once.pixels.iter().zip(&twice.pixels) {
            prop_assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn nearest_resize_never_invents_labels(
        w in 1usize..12, h in 1usize..12, tw in 1usize..30, th in 1usize..30, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = LabelMask::new(w, h, (0..w * h).map(|_| rng.gen_range(0..=10)).collect()).unwrap();
        let r = resize_mask(&m, tw, th, Interp::Nearest).unwrap();
        let src = m.label_set();
        prop_assert!(r.label_set().iter().all(|l| src.contains(l)));
    }
}
