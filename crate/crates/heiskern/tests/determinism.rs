use std::path::Path;
use std::process::Command;

fn run(dir: &Path, out: &str, args: &[&str]) -> (String, String) {
    let child = Command::new(env!("CARGO_BIN_EXE_heiskern"))
        .args(args)
        .args(["--out", out, "-q"])
        .current_dir(dir)
        .output()
        .expect("binary runs");
    assert!(child.status.code().is_some_and(|c| c < 2), "{args:?}");
    let summary = std::fs::read_to_string(dir.join(out).join("summary.json")).unwrap();
    let detail = std::fs::read_to_string(dir.join(out).join("detail.csv")).unwrap();
    (without_timestamp(&summary), detail)
}

fn without_timestamp(summary: &str) -> String {
    let at = summary.find("\"timestamp\"").expect("timestamp is present");
    summary[..at].to_string()
}

#[test]
fn reports_do_not_depend_on_threads_or_reruns() {
    let dir = tempfile::tempdir().unwrap();
    for exp in ["yor", "quasi-invariance", "heat-kernel", "ibp"] {
        let args = [exp, "--paths", "3000", "--steps", "64", "--seed", "77"];
        let a = run(dir.path(), "a", &[&args[..], &["--threads", "1"]].concat());
        let b = run(dir.path(), "b", &[&args[..], &["--threads", "2"]].concat());
        let c = run(dir.path(), "c", &[&args[..], &["--threads", "2"]].concat());
        assert_eq!(a, b, "{exp}: threads changed the report");
        assert_eq!(b, c, "{exp}: rerun changed the report");
    }
}

#[test]
fn seeds_change_the_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(dir.path(), "a", &["yor", "--paths", "2000", "--steps", "32", "--seed", "1"]);
    let b = run(dir.path(), "b", &["yor", "--paths", "2000", "--steps", "32", "--seed", "2"]);
    assert_ne!(a.1, b.1);
}
