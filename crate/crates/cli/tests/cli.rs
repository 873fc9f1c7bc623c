use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rescomp"));
    c.env_remove("RESCOMP_THREADS");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn generate_lorenz_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("l.csv");
    let o = run(&["generate-data", "--system", "lorenz63", "--tN", "20", "--dt", "0.01", "--u0", "-10,1,10", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "2000 x 3");
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 2001);
    assert_eq!(text.lines().next(), Some("t,x0,x1,x2"));
}

#[test]
fn generate_ks_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ks.csv");
    let o = run(&["generate-data", "--system", "ks", "--Nx", "128", "--tN", "1000", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "4000 x 128");
}

#[test]
fn unknown_system_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["generate-data", "--system", "lorenz64", "--tN", "1", "--out", dir.path().join("x.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lorenz64"));
}

#[test]
fn wrong_initial_condition_length_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["generate-data", "--system", "lorenz63", "--tN", "1", "--u0", "1,2", "--out", dir.path().join("x.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bundled_lorenz_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lorenz");
    let cfg = configs().join("lorenz.toml");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = json(&out.join("metrics.json"));
    assert!(m["valid_time_LT"].as_f64().unwrap() > 0.0);
    let curve = out.join(m["rmse_curve_path"].as_str().unwrap());
    assert_eq!(std::fs::read_to_string(curve).unwrap().lines().count(), 2001);
    let model = rescomp::checkpoint::load(out.join("model.orcm")).unwrap();
    assert!(matches!(model, rescomp::checkpoint::Checkpoint::Discrete(_)));
    let fc = std::fs::read_to_string(out.join("forecast.csv")).unwrap();
    assert_eq!(fc.lines().count(), 2001);
}

#[test]
fn indivisible_chunks_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        "[data]\nsystem = \"lorenz63\"\nt_n = 10.0\n[model]\nres_dim = 50\nchunks = 2\n[train]\nspinup = 10\n",
    );
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.chunks"), "{}", stderr(&o));
}

#[test]
fn typo_in_config_reports_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "typo.toml", "[data]\nsystem = \"lorenz63\"\n\n[model]\nleak_rte = 0.5\n");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("leak_rte") && err.contains("line 5"), "{err}");
}

#[test]
fn run_from_csv_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("r.csv");
    let o = run(&["generate-data", "--system", "rossler", "--tN", "60", "--dt", "0.05", "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = write(
        dir.path(),
        "csv.toml",
        &format!(
            "[data]\nsystem = \"csv\"\npath = {:?}\n[model]\nres_dim = 200\n[train]\nspinup = 50\n",
            data.to_str().unwrap()
        ),
    );
    let out = dir.path().join("o");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = json(&out.join("metrics.json"));
    assert!(m["valid_time"].as_f64().unwrap() >= 0.0);
    assert!(m["valid_time_LT"].is_null());
    assert_eq!(m["test_samples"].as_u64(), Some(240));
}

#[test]
fn classifier_probabilities_are_normalized() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cls");
    let cfg = configs().join("classify.toml");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let preds = json(&out.join("predictions.json"));
    let preds = preds.as_array().unwrap();
    assert_eq!(preds.len(), 30);
    for p in preds {
        let probs: Vec<f64> = p["probs"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p["predicted"].as_u64().unwrap() < 3);
    }
    assert!(json(&out.join("metrics.json"))["accuracy"].as_f64().unwrap() >= 0.9);
}

#[test]
fn horizon_longer_than_reference_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[mpc]\nhorizon = 40\n[run]\nsteps = 10\nreference_len = 30\n");
    let o = run(&["control-demo", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mpc.horizon"));
}

#[test]
fn zero_tracking_weight_gives_zero_control() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[model]\nres_dim = 100\n[train]\nspinup = 50\n[mpc]\nhorizon = 5\nalpha_track = 0.0\n[run]\nsteps = 10\nreference_len = 20\n",
    );
    let out = dir.path().join("o");
    let o = run(&["control-demo", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(&out.join("summary.json"));
    assert!(s["max_abs_control"].as_f64().unwrap() < 1e-9, "{s}");
    assert_eq!(std::fs::read_to_string(out.join("controlled.csv")).unwrap().lines().count(), 11);
    assert_eq!(std::fs::read_to_string(out.join("uncontrolled.csv")).unwrap().lines().count(), 11);
}

#[test]
fn minimal_bench_completes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let o = run(&[
        "bench", "--res-dims", "100,200", "--train-lens", "300,600", "--train-res-dim", "100", "--repeats", "1", "--steps", "50", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fc = std::fs::read_to_string(out.join("bench_forecast.csv")).unwrap();
    assert_eq!(fc.lines().count(), 3);
    assert!(fc.lines().nth(1).unwrap().starts_with("100,"));
    let tr = std::fs::read_to_string(out.join("bench_train.csv")).unwrap();
    assert_eq!(tr.lines().count(), 3);
    for svg in ["bench_forecast.svg", "bench_train.svg"] {
        assert!(std::fs::read_to_string(out.join(svg)).unwrap().contains("<polyline"));
    }
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .env("RESCOMP_THREADS", "zero")
        .args(["generate-data", "--system", "lorenz63", "--tN", "1", "--out", dir.path().join("x.csv").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn every_bundled_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["lorenz", "ks", "cesn", "classify"] {
        let cfg = configs().join(format!("{name}.toml"));
        let out = dir.path().join(name);
        let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        assert!(out.join("metrics.json").exists());
    }
    let out = dir.path().join("control");
    let cfg = configs().join("control.toml");
    let o = run(&["control-demo", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(&out.join("summary.json"));
    assert!(s["controlled_final_norm"].as_f64().unwrap() < s["uncontrolled_final_norm"].as_f64().unwrap());
}
