use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gibs-amf"))
        .args(args)
        .env("GIBS_AMF_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) {
    let o = bin(&["--out", path(dir), "--seed", "5", "synth"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(a.path());
    synth(b.path());
    for f in ["returns.csv", "meta.csv", "factors.csv", "ground_truth.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f} empty");
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn too_short_history_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"synth": {"weeks": 100}}"#).unwrap();
    let o = bin(&["--config", path(&cfg), "--out", path(dir.path()), "synth"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_data_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["--data", path(&dir.path().join("absent")), "--out", path(dir.path()), "run"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_and_rerun_match() {
    let data = tempfile::tempdir().unwrap();
    synth(data.path());
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (out, jobs) in [(a.path(), "1"), (b.path(), "3")] {
        let o = bin(&["--data", path(data.path()), "--out", path(out), "--jobs", jobs, "--eval-start", "2007-10-05", "run"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ledger = std::fs::read(a.path().join("ledger.jsonl")).unwrap();
    assert!(!ledger.is_empty());
    assert_eq!(ledger, std::fs::read(b.path().join("ledger.jsonl")).unwrap());
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary["eval_weeks"].as_u64().unwrap() > 0);
    assert_eq!(summary["completed_weeks"], summary["eval_weeks"]);
    assert!(a.path().join("report").join("gof.csv").is_file());
}

#[test]
fn portfolios_only_skips_fits() {
    let data = tempfile::tempdir().unwrap();
    synth(data.path());
    let out = tempfile::tempdir().unwrap();
    let o = bin(&["--data", path(data.path()), "--out", path(out.path()), "run", "--portfolios-only"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.path().join("portfolios.csv").is_file());
    assert!(!out.path().join("ledger.jsonl").exists());
}

#[test]
fn dims_rows_are_bounded_by_etf_count() {
    let data = tempfile::tempdir().unwrap();
    synth(data.path());
    let out = tempfile::tempdir().unwrap();
    let o = bin(&["--data", path(data.path()), "--out", path(out.path()), "--eval-start", "2007-10-05", "dims"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.path().join("dimensions.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("date,etf_count,gibs_dim,pca_dim"));
    let mut n = 0;
    for l in lines {
        let f: Vec<usize> = l.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        assert!(f[1] >= 1 && f[1] <= f[0] && f[2] <= f[0], "{l}");
        n += 1;
    }
    assert!(n > 0);
}
