use std::path::Path;
use std::process::{Command, Output};

fn heiskern(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heiskern")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn list_describes_every_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let o = heiskern(&["list"], dir.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["yor", "heat-kernel", "gamma", "quasi-invariance", "ibp", "tails", "fernique", "spectral", "all"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing from\n{text}");
    }
}

#[test]
fn passing_run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = heiskern(&["yor", "--paths", "50000", "--steps", "256", "--out", "r", "-q"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["experiment"], "yor");
    assert_eq!(summary["pass"], true);
    assert_eq!(summary["n_paths"], 50000);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
    assert!(dir.path().join("r/detail.csv").exists());
}

#[test]
fn default_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = heiskern(&["spectral", "-q"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("heiskern-out/spectral/summary.json").exists());
}

#[test]
fn failing_checks_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"tolerance": {"k_sigma": 0.0, "relative": 0.0}}"#;
    std::fs::write(dir.path().join("strict.json"), cfg).unwrap();
    let o = heiskern(&["yor", "--config", "strict.json", "--paths", "2000", "--steps", "32", "--out", "r"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    assert!(dir.path().join("r/summary.json").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&heiskern(&["no-such-experiment"], dir.path())), 2);
    assert_eq!(code(&heiskern(&["yor", "--paths", "many"], dir.path())), 2);
    assert_eq!(code(&heiskern(&["yor", "--paths", "1"], dir.path())), 2);
    assert_eq!(code(&heiskern(&["yor", "--config", "missing.json"], dir.path())), 2);
    assert_eq!(code(&heiskern(&["yor", "--threads", "0"], dir.path())), 2);
    assert_eq!(code(&heiskern(&[], dir.path())), 2);
    assert_eq!(code(&heiskern(&["--help"], dir.path())), 0);
}

#[test]
fn malformed_forms_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = [
        r#"{"form": {"kind": "inline", "dim_w": 2, "omegas": [[0, 1, 1, 0]]}}"#,
        r#"{"form": {"kind": "inline", "dim_w": 3, "omegas": [[0, 1, -1, 0]]}}"#,
        r#"{"form": {"kind": "inline", "dim_w": 3, "omegas": [[0, 1, 0, -1, 0, 0, 0, 0, 0], [0, 2, 0, -2, 0, 0, 0, 0, 0]]}}"#,
        r#"{"form": {"kind": "free", "n": 1}}"#,
        r#"{"form": {"kind": "h3"}, "unknown": 1}"#,
        r#"{"experiment": "gamma"}"#,
        r#"{"horizon": -1}"#,
    ];
    for (i, text) in bad.iter().enumerate() {
        let name = format!("bad{i}.json");
        std::fs::write(dir.path().join(&name), text).unwrap();
        let o = heiskern(&["spectral", "--config", &name, "-q"], dir.path());
        assert_eq!(code(&o), 2, "{text}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    }
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"experiment": "spectral", "mc": {"n_paths": 10, "n_steps": 8, "seed": 5}, "params": {"random_matrices": 2}}"#;
    std::fs::write(dir.path().join("c.json"), cfg).unwrap();
    let o = heiskern(&["spectral", "--config", "c.json", "--seed", "9", "--out", "r", "-q"], dir.path());
    assert_eq!(code(&o), 0);
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r/summary.json")).unwrap()).unwrap();
    assert_eq!(s["seed"], 9);
    assert_eq!(s["n_paths"], 10);
    assert_eq!(s["params"]["random_matrices"], 2);
}
