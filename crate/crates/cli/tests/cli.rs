use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ggmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ggmp"))
        .args(args)
        .env("GGMP_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_small(dir: &Path) {
    let out = ggmp(&["synth", "--out-dir", s(dir), "--n", "24", "--t", "200", "--grid-points", "128", "--seed", "3", "--truth"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn fit(dir: &Path, k: &str, name: &str) -> std::path::PathBuf {
    let model = dir.join(name);
    let out = ggmp(&[
        "fit", "--data", s(&dir.join("samples.csv")), "--out", s(&model), "-k", k, "--em-restarts", "1", "--gp-restarts", "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    model
}

#[test]
fn synth_into_missing_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = ggmp(&["synth", "--out-dir", s(&dir.path().join("nope")), "--n", "5", "--t", "10"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_fit_predict_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    let samples = fs::read_to_string(d.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().filter(|l| !l.starts_with('#')).count(), 1 + 24 * 200);
    let model = fit(d, "2", "m.json");

    let out = ggmp(&["predict", "--model", s(&model), "--x", "0.5;-1.0", "--grid", "-6,6,25"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 2 * 25);

    let report = d.join("metrics.csv");
    let out = ggmp(&[
        "eval", "--model", s(&model), "--data", s(&d.join("samples.csv")), "--truth", s(&d.join("truth.csv")), "--out",
        s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(report).unwrap();
    let body: Vec<&str> = report.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "model,K,metric,mean,std");
    for metric in ["bhattacharyya", "pit_mean", "cov90"] {
        let row = body.iter().find(|l| l.split(',').nth(2) == Some(metric)).expect(metric);
        let mean: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
        assert!(mean.is_finite() && mean >= 0.0);
        assert!(row.starts_with("GGMP_2,2,"));
    }
}

#[test]
fn divergence_without_truth_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    let model = fit(d, "1", "m.json");
    let out = ggmp(&[
        "eval", "--model", s(&model), "--data", s(&d.join("samples.csv")), "--metrics", "divergence", "--out",
        s(&d.join("r.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_resume_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    let bad = d.join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = ggmp(&[
        "fit", "--data", s(&d.join("samples.csv")), "--out", s(&d.join("m.json")), "--resume", s(&bad), "-k", "2",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn resume_reuses_local_fits() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    let first = fit(d, "2", "a.json");
    let second = d.join("b.json");
    let out = ggmp(&[
        "fit", "--data", s(&d.join("samples.csv")), "--out", s(&second), "--resume", s(&first), "-k", "2",
        "--gp-restarts", "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = ggmp(&[
        "fit", "--data", s(&d.join("samples.csv")), "--out", s(&d.join("c.json")), "--resume", s(&first), "-k", "3",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablation_reports_one_row_per_k() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    let report = d.join("ablate.csv");
    let out = ggmp(&[
        "ablate-weights", "--data", s(&d.join("samples.csv")), "--ks", "2,3", "--input-dependent", "--em-restarts", "1",
        "--gp-restarts", "1", "--out", s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(report).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "K,L_equal,L_shared,L_input_dependent,lift_shared_pct,lift_input_dependent_pct");
    assert_eq!(body.len(), 3);
    for row in &body[1..] {
        let v: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(v[4] >= 0.0 && v[5] >= -1e-9, "{row}");
    }
}
