use enteroseg_imaging::volume::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ramp(dims: [usize; 3]) -> Volume<f32> {
    let mut data = Vec::new();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                data.push((x + 10 * y + 100 * z) as f32);
            }
        }
    }
    Volume::new(dims, data).unwrap()
}

#[test]
fn coronal_slicing_counts_and_shapes() {
    let v = ramp([2, 3, 2]);
    let s = volume_to_slices(&v, CORONAL, "p1").unwrap();
    assert_eq!(s.len(), 3);
    assert!(s.iter().all(|s| (s.width, s.height) == (2, 2)));
    assert_eq!(s[2].provenance.as_ref().unwrap(), &Provenance { patient: "p1".into(), slice: 2, axis: 1 });
    let v = ramp([2, 2, 3]);
    assert_eq!(volume_to_slices(&v, 2, "p").unwrap().len(), 3);
}

#[test]
fn coronal_index_convention() {
    let dims = [5, 4, 3];
    let v = ramp(dims);
    let s = volume_to_slices(&v, CORONAL, "p").unwrap();
    for z in 0..3 {
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(s[y].pixels[z * 5 + x], (x + 10 * y + 100 * z) as f32);
            }
        }
    }
}

#[test]
fn every_axis_restacks() {
    let v = ramp([4, 3, 2]);
    for axis in 0..3 {
        let s = volume_to_slices(&v, axis, "p").unwrap();
        assert_eq!(s.len(), v.dims[axis]);
        assert_eq!(slices_to_volume(&s, axis).unwrap(), v);
    }
    assert!(volume_to_slices(&v, 3, "p").is_err());
}

#[test]
fn single_slice_stacks_to_depth_one() {
    let m = LabelMask::new(3, 2, vec![0, 1, 2, 3, 4, 5]).unwrap();
    let v = stack_predictions(std::slice::from_ref(&m), CORONAL).unwrap();
    assert_eq!(v.dims, [3, 1, 2]);
    assert_eq!(volume_to_masks(&v, CORONAL).unwrap(), vec![m]);
}

#[test]
fn stacking_rejects_mixed_sizes() {
    let a = LabelMask::new(2, 2, vec![0; 4]).unwrap();
    let b = LabelMask::new(3, 2, vec![0; 6]).unwrap();
    assert!(stack_predictions(&[a, b], CORONAL).is_err());
    assert!(stack_predictions(&[], CORONAL).is_err());
}

#[test]
fn stacked_predictions_random_probe() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (w, h, n) = (13, 9, 7);
    let masks: Vec<LabelMask> =
        (0..n).map(|_| LabelMask::new(w, h, (0..w * h).map(|_| rng.gen_range(0..=10)).collect()).unwrap()).collect();
    let v = stack_predictions(&masks, CORONAL).unwrap();
    assert_eq!(v.dims, [w, n, h]);
    for _ in 0..1000 {
        let (x, s, z) = (rng.gen_range(0..w), rng.gen_range(0..n), rng.gen_range(0..h));
        assert_eq!(v.get(x, s, z), masks[s].labels[z * w + x]);
    }
}

#[test]
fn label_mask_validation() {
    assert!(LabelMask::new(2, 1, vec![0, 11]).is_err());
    assert!(LabelMask::new(2, 2, vec![0, 1]).is_err());
    assert_eq!(LabelMask::new(3, 1, vec![7, 0, 7]).unwrap().label_set(), vec![0, 7]);
}

proptest! {
    #[test]
    fn label_volume_restack_roundtrip(nx in 1usize..6, ny in 1usize..6, nz in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = Volume::new([nx, ny, nz], (0..nx * ny * nz).map(|_| rng.gen_range(0..=10u8)).collect()).unwrap();
        let masks = volume_to_masks(&v, CORONAL).unwrap();
        prop_assert_eq!(stack_predictions(&masks, CORONAL).unwrap(), v);
    }
}
