use enteroseg::phantom::{generate, label_counts, patient_id, write_phantoms, OrganSpec, PhantomSpec, Shape};
use enteroseg_imaging::nifti::parse_nifti;

mod common;

fn spec(cfg_patients: usize) -> PhantomSpec {
    common::tiny_config(cfg_patients, 1).phantom.unwrap()
}

#[test]
fn fixed_seed_gives_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s = spec(3);
    write_phantoms(&s, 5, a.path()).unwrap();
    write_phantoms(&s, 5, b.path()).unwrap();
    for p in 0..3 {
        for f in ["image.nii.gz", "labels.nii.gz"] {
            let x = std::fs::read(a.path().join(patient_id(p)).join(f)).unwrap();
            let y = std::fs::read(b.path().join(patient_id(p)).join(f)).unwrap();
            assert_eq!(x, y, "{p}/{f}");
        }
    }
    let other = generate(&s, 6, 0).unwrap();
    assert_ne!(generate(&s, 5, 0).unwrap().1.data, other.1.data, "a different seed changes the labels");
}

#[test]
fn rewrite_changes_nothing() {
    let d = tempfile::tempdir().unwrap();
    let s = spec(2);
    let (_, first) = write_phantoms(&s, 1, d.path()).unwrap();
    assert_eq!(first, 5);
    let (_, second) = write_phantoms(&s, 1, d.path()).unwrap();
    assert_eq!(second, 0);
}

#[test]
fn stats_match_a_recount_of_the_written_labels() {
    let d = tempfile::tempdir().unwrap();
    let s = spec(4);
    let (stats, _) = write_phantoms(&s, 9, d.path()).unwrap();
    let on_disk: enteroseg::phantom::PhantomStats =
        serde_json::from_slice(&std::fs::read(d.path().join("phantom_stats.json")).unwrap()).unwrap();
    assert_eq!(on_disk, stats);
    for ps in &stats.patients {
        let gz = std::fs::read(d.path().join(&ps.patient).join("labels.nii.gz")).unwrap();
        let labels = parse_nifti(&gz).unwrap().to_labels().unwrap();
        assert_eq!(label_counts(&labels, 4), ps.counts);
        assert_eq!(ps.counts.iter().sum::<u64>(), 32 * 6 * 32);
        let img = parse_nifti(&std::fs::read(d.path().join(&ps.patient).join("image.nii.gz")).unwrap()).unwrap();
        assert_eq!(img.dims, [32, 6, 32]);
        assert!(img.voxels.iter().all(|v| v.fract() == 0.0));
    }
}

#[test]
fn labels_are_contiguous_and_rare_class_is_tiny() {
    let s = spec(1);
    let total = 32 * 6 * 32;
    for i in 0..30 {
        let (_, labels) = generate(&s, 3, i).unwrap();
        let counts = label_counts(&labels, 4);
        assert!(labels.data.iter().all(|&v| v <= 3));
        assert!(counts[3] > 0, "prevalence 1 means always present");
        assert!((counts[3] as f64) < 0.005 * total as f64, "rare class covers {} voxels", counts[3]);
        assert!(counts[1] > 0 && counts[2] > 0);
    }
}

#[test]
fn prevalence_of_ten_phantoms_is_binomial() {
    let mut s = spec(10);
    s.organs[2].prevalence = 0.3;
    let present = (0..10).filter(|&i| label_counts(&generate(&s, 21, i).unwrap().1, 4)[3] > 0).count();
    // Binomial(10, 0.3): P(X > 7) < 2e-3.
    assert!(present <= 7, "{present} of 10");
}

#[test]
fn prevalence_frequency_over_many_phantoms() {
    let mut s = spec(1);
    s.dims = [24, 8, 24];
    s.organs[2].radius = [0.02, 0.02];
    s.organs[2].prevalence = 0.3;
    let n = 400;
    let present = (0..n).filter(|&i| label_counts(&generate(&s, 2, i).unwrap().1, 4)[3] > 0).count() as f64;
    let (mean, sd) = (0.3 * n as f64, (n as f64 * 0.3 * 0.7).sqrt());
    assert!((present - mean).abs() <= 3.0 * sd, "{present} vs {mean} +- {}", 3.0 * sd);
}

#[test]
fn oversized_rare_organ_is_rejected() {
    let mut s = spec(1);
    s.organs[2].radius = [0.1, 0.2];
    assert!(s.validate().is_err());
    let mut s = spec(1);
    s.organs[2].shape = Shape::Tube;
    assert!(s.validate().is_err());
}

#[test]
fn bad_specs_are_rejected() {
    let base = spec(1);
    let organ = |r: [f64; 2]| OrganSpec { name: "x".into(), shape: Shape::Ellipsoid, radius: r, contrast: [1.0, 2.0], prevalence: 1.0, rare: false };
    for s in [
        PhantomSpec { patients: 0, ..base.clone() },
        PhantomSpec { dims: [2, 6, 32], ..base.clone() },
        PhantomSpec { organs: vec![], ..base.clone() },
        PhantomSpec { organs: vec![organ([0.0, 0.1])], ..base.clone() },
        PhantomSpec { organs: vec![organ([0.3, 0.2])], ..base.clone() },
        PhantomSpec { noise: -1.0, ..base.clone() },
    ] {
        assert!(s.validate().is_err(), "{s:?}");
    }
}
