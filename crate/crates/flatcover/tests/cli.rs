use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flatcover"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn flatcover")
}

fn hyperbolic(dir: &Path) -> String {
    let p = dir.join("phase.json");
    fs::write(&p, r#"{"degree": 2, "coeffs": [[1, 1, 1.0]]}"#).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn build_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let phase = hyperbolic(dir.path());
    let cover = dir.path().join("cover.json");
    let cover = cover.to_str().unwrap();
    let o = run(&["cover", "build", "--phase", &phase, "--delta", "2^-8", "--out", cover]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let saved: serde_json::Value = serde_json::from_str(&fs::read_to_string(cover).unwrap()).unwrap();
    assert!(saved.get("schema_version").is_some());
    let o = run(&["cover", "verify", "--phase", &phase, "--cover", cover, "--grid", "256"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn malformed_phase_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, "{\"degree\": 2, \"coeffs\": [[1, 1").unwrap();
    let o = run(&["cover", "build", "--phase", p.to_str().unwrap(), "--delta", "2^-6"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["cover", "build", "--phase", p.to_str().unwrap(), "--delta", "3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_writes_csv_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let rep = dir.path().join("r.json");
    let o = run(&[
        "decouple", "sweep", "--example", "line", "--p", "4", "--out",
        csv.to_str().unwrap(), "--report", rep.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.lines().next().unwrap().starts_with("delta,"));
    assert!(text.lines().count() >= 5);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&rep).unwrap()).unwrap();
    assert!(report["slope"].as_f64().unwrap().is_finite());
}

#[test]
fn sweep_is_deterministic_across_thread_counts() {
    let args = ["decouple", "sweep", "--example", "strip", "--l-min", "6", "--l-max", "9"];
    let a = bin().args(args).env("DECOUPLE_JOBS", "1").output().unwrap();
    let b = bin().args(args).env("DECOUPLE_JOBS", "4").output().unwrap();
    assert_eq!(a.status.code(), Some(0));
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn reproduce_unknown_id_and_custom_recipe() {
    let o = run(&["reproduce", "no-such-recipe"]);
    assert_eq!(o.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("recipes.json");
    fs::write(
        &r,
        r#"[{"id": "tiny", "criterion": 1, "checks": [{"label": "closed form",
            "experiment": {"kind": "flat_closed_form", "boxes": 10, "seed": 3}, "hi": 1e-12}]}]"#,
    )
    .unwrap();
    let o = run(&["reproduce", "tiny", "--recipes", r.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("PASS"));
    let out: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(out["passed"], true);

    let o = run(&["reproduce", "--list"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("discrete-restriction"));
}

#[test]
fn pell_csv_header() {
    let o = run(&["lattice", "pell", "--bmax", "1000"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("b,a,gap,product"));
    assert!(lines.next().unwrap().starts_with("1,"));
}

#[test]
fn flat_defect_of_axis_box() {
    let dir = tempfile::tempdir().unwrap();
    let phase = hyperbolic(dir.path());
    let o = run(&["flat", "defect", "--phase", &phase, "--box", "0.5,0.5,0.1,0,0,0.05"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let d = v["defect"].as_f64().unwrap();
    assert!((d - 0.2 * 0.1).abs() < 1e-12, "{d}");
}

#[test]
fn bad_jobs_value_is_rejected() {
    let o = bin().args(["lattice", "pell", "--bmax", "10"]).env("DECOUPLE_JOBS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}
