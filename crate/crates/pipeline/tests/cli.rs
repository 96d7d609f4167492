use std::process::Command;

mod common;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_enteroseg"))
}

fn error_line(stderr: &[u8]) -> serde_json::Value {
    let text = String::from_utf8_lossy(stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not a JSON error line ({e}): {text}"))
}

fn setup() -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, common::tiny_toml(5, 1)).unwrap();
    (dir, cfg)
}

#[test]
fn missing_artifact_exits_nonzero_with_json_error() {
    let (dir, cfg) = setup();
    let out = bin().args(["train-coarse", "--fold", "0", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert!(!out.status.success());
    let e = error_line(&out.stderr);
    assert_eq!(e["error"], "missing_artifact");
    assert!(e["message"].as_str().unwrap().contains("enteroseg split"), "{e}");
}

#[test]
fn missing_config_and_bad_config_are_errors() {
    let (dir, cfg) = setup();
    let out = bin().arg("split").output().unwrap();
    assert!(!out.status.success());
    assert_eq!(error_line(&out.stderr)["error"], "config");

    std::fs::write(&cfg, "seed = 1\n").unwrap();
    let out = bin().arg("split").arg("--config").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(error_line(&out.stderr)["error"], "config");
}

#[test]
fn early_stages_run_and_bad_fold_or_class_is_rejected() {
    let (dir, cfg) = setup();
    let o = dir.path().join("o");
    for cmd in ["phantom", "convert", "split"] {
        let out = bin().arg(cmd).arg("--config").arg(&cfg).arg("--out").arg(&o).output().unwrap();
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!(v.is_object(), "{cmd}: {v}");
    }
    assert!(o.join("folds.toml").exists());
    assert!(o.join("manifest.json").exists());

    let out = bin().args(["train-coarse", "--fold", "5", "--config"]).arg(&cfg).arg("--out").arg(&o).output().unwrap();
    assert!(!out.status.success());
    assert_eq!(error_line(&out.stderr)["error"], "invalid");

    let out = bin().args(["extract-roi", "--class", "spleen", "--config"]).arg(&cfg).arg("--out").arg(&o).output().unwrap();
    assert!(!out.status.success());
    assert_eq!(error_line(&out.stderr)["error"], "invalid");

    // Convert again: nothing changes on disk.
    let out = bin().arg("convert").arg("--config").arg(&cfg).arg("--out").arg(&o).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["changed_files"], 0);
}

#[test]
fn seed_flag_overrides_the_config() {
    let (dir, cfg) = setup();
    let run = |seed: &str, sub: &str| {
        let o = dir.path().join(sub);
        let out = bin().args(["phantom", "--seed", seed, "--config"]).arg(&cfg).arg("--out").arg(&o).output().unwrap();
        assert!(out.status.success());
        std::fs::read(o.join("raw/phantom_000/labels.nii.gz")).unwrap()
    };
    assert_eq!(run("3", "a"), run("3", "b"));
    assert_ne!(run("3", "c"), run("4", "d"));
}
