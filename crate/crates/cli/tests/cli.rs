use std::path::PathBuf;
use std::process::Command;

fn safari() -> Command {
    Command::new(env!("CARGO_BIN_EXE_safari"))
}

fn quick_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/quick.toml")
}

#[test]
fn validate_accepts_bundled_configs() {
    for name in ["quick.toml", "reference.toml", "clone.toml"] {
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
        let out = safari().args(["validate", "--config"]).arg(&path).output().unwrap();
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
    }
}

#[test]
fn validate_lists_bad_fields() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(quick_config())
        .unwrap()
        .replace("level = 0.5", "level = 1.5")
        .replace("local_steps = 2", "local_steps = 0");
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let out = safari().args(["validate", "--config"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sparsity.level"), "{err}");
    assert!(err.contains("training.local_steps"), "{err}");
}

#[test]
fn run_writes_outputs_for_selected_modes() {
    let dir = tempfile::tempdir().unwrap();
    let out = safari()
        .args(["run", "--config"])
        .arg(quick_config())
        .args(["--modes", "safari,drop", "--seed", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in [
        "metrics_safari.csv",
        "metrics_drop.csv",
        "surrogates_safari.csv",
        "surrogates_drop.csv",
        "similarity_final.csv",
        "analysis.json",
    ] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }
    assert!(!dir.path().join("metrics_fedavg.csv").exists());
    let metrics = std::fs::read_to_string(dir.path().join("metrics_safari.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 13);
}

#[test]
fn seed_override_changes_the_run() {
    let run = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = safari()
            .args(["run", "--config"])
            .arg(quick_config())
            .args(["--modes", "safari", "--seed", seed, "--out"])
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(out.status.success());
        std::fs::read_to_string(dir.path().join("metrics_safari.csv")).unwrap()
    };
    assert_eq!(run("4"), run("4"));
    assert_ne!(run("4"), run("5"));
}

#[test]
fn matrix_dumps_only_the_similarity_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = safari()
        .args(["matrix", "--config"])
        .arg(quick_config())
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(files.len(), 1);
    let matrix = std::fs::read_to_string(dir.path().join("similarity_final.csv")).unwrap();
    assert_eq!(matrix.lines().count(), 4);
}

#[test]
fn unknown_mode_is_rejected() {
    let out = safari()
        .args(["run", "--config"])
        .arg(quick_config())
        .args(["--modes", "gossip", "--out", "/tmp/never"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
