use enteroseg::data::{convert_dataset, load_patient, mask_dir, slice_dir};
use enteroseg::phantom::{generate, patient_id, write_phantoms};
use enteroseg_imaging::volume::extract_planes;

mod common;

fn files_under(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn two_patients_give_one_slice_per_coronal_index() {
    let raw = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let spec = common::tiny_config(2, 1).phantom.unwrap();
    write_phantoms(&spec, 4, raw.path()).unwrap();
    let rep = convert_dataset(raw.path(), out.path(), 3).unwrap();
    assert_eq!(rep.converted, vec![patient_id(0), patient_id(1)]);
    assert!(rep.failures.is_empty());
    for p in &rep.converted {
        let pngs = |d: std::path::PathBuf| std::fs::read_dir(d).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "png").count();
        assert_eq!(pngs(slice_dir(out.path(), p)), 6);
        assert_eq!(pngs(mask_dir(out.path(), p)), 6);
    }
}

#[test]
fn converted_tree_round_trips_labels_exactly() {
    let raw = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let spec = common::tiny_config(1, 1).phantom.unwrap();
    write_phantoms(&spec, 4, raw.path()).unwrap();
    convert_dataset(raw.path(), out.path(), 3).unwrap();
    let (image, labels) = generate(&spec, 4, 0).unwrap();
    let back = load_patient(out.path(), &patient_id(0)).unwrap();
    assert_eq!(back.labels, labels);
    assert_eq!(back.meta.pixdim, [1.5, 4.0, 1.5]);
    // Intensities come back as a monotone 8-bit quantization.
    let lo = image.data.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = image.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    for (a, b) in image.data.iter().zip(&back.intensity.data) {
        let expect = ((a - lo) / (hi - lo) * 255.0).round();
        assert_eq!(*b, expect);
    }
    assert_eq!(extract_planes(&back.labels, 1).unwrap().len(), 6);
}

#[test]
fn rerun_is_idempotent() {
    let raw = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_phantoms(&common::tiny_config(2, 1).phantom.unwrap(), 4, raw.path()).unwrap();
    let first = convert_dataset(raw.path(), out.path(), 3).unwrap();
    assert_eq!(first.changed_files, 2 * (6 + 6 + 1));
    let before = files_under(out.path());
    let second = convert_dataset(raw.path(), out.path(), 3).unwrap();
    assert_eq!(second.changed_files, 0);
    assert_eq!(files_under(out.path()), before);
}

#[test]
fn corrupt_and_unpaired_patients_are_reported_and_skipped() {
    let raw = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_phantoms(&common::tiny_config(3, 1).phantom.unwrap(), 4, raw.path()).unwrap();
    std::fs::write(raw.path().join(patient_id(1)).join("image.nii.gz"), b"\x1f\x8bnot really gzip").unwrap();
    let rep = convert_dataset(raw.path(), out.path(), 3).unwrap();
    assert_eq!(rep.converted, vec![patient_id(0), patient_id(2)]);
    assert_eq!(rep.failures.len(), 1);
    assert_eq!(rep.failures[0].patient, patient_id(1));

    std::fs::remove_file(raw.path().join(patient_id(2)).join("labels.nii.gz")).unwrap();
    let rep = convert_dataset(raw.path(), out.path(), 3).unwrap();
    assert_eq!(rep.converted, vec![patient_id(0)]);
    assert_eq!(rep.failures.len(), 2);
    assert!(rep.failures[1].error.contains("labels.nii"), "{}", rep.failures[1].error);
}

#[test]
fn labels_beyond_the_configured_classes_fail_the_patient() {
    let raw = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_phantoms(&common::tiny_config(1, 1).phantom.unwrap(), 4, raw.path()).unwrap();
    let rep = convert_dataset(raw.path(), out.path(), 2).unwrap();
    assert!(rep.converted.is_empty());
    assert!(rep.failures[0].error.contains("label 3"), "{}", rep.failures[0].error);
}
