use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn akrel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_akrel")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

const LINEAR: &str = r#"{ "limit_state": { "kind": "linear_gaussian", "beta": 2.0 }, "pool_size": 2000 }"#;
const RASTRIGIN_SMALL: &str = r#"{ "limit_state": { "kind": "rastrigin" }, "pool_size": 600 }"#;

#[test]
fn missing_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = akrel(&["run", "--config", "/nonexistent/cfg.json", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cfg.json"));
}

#[test]
fn unknown_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "{\n  \"pool_size\": 100,\n  \"poolsize\": 5\n}");
    let out = akrel(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("poolsize") && err.contains("line 3"), "{err}");
}

#[test]
fn wrong_schema_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{ "schema_version": 2 }"#);
    let out = akrel(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", LINEAR);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = akrel(&["run", "--config", cfg.to_str().unwrap(), "--seed", "7", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["history.csv", "summary.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    let hist = read(a.join("history.csv"));
    let mut lines = hist.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iteration,n_call,pf_hat,variance,cov_estimator,cov_mcs,score,selected,points,theta"
    );
    // 17 significant digits
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[2].split('e').next().unwrap().trim_start_matches('-').len(), 18);
    let summary: serde_json::Value = serde_json::from_str(&read(a.join("summary.json"))).unwrap();
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["stop_cause"], "estimator_cov");
    assert!(a.join("timing.csv").exists());
}

#[test]
fn max_iterations_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", RASTRIGIN_SMALL);
    let o = akrel(&["run", "--config", cfg.to_str().unwrap(), "--max-iter", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let hist = read(dir.path().join("history.csv"));
    assert_eq!(hist.lines().count(), 1 + 3);
}

#[test]
fn batch_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", RASTRIGIN_SMALL);
    let o = akrel(&[
        "run", "--config", cfg.to_str().unwrap(), "--strategy", "opt_wco", "--n-para", "5", "--policy", "mmse",
        "--max-iter", "2", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let hist = read(dir.path().join("history.csv"));
    let rows: Vec<&str> = hist.lines().skip(1).collect();
    let mut rdr = csv::Reader::from_reader(hist.as_bytes());
    let recs: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(recs[0][7].split(';').count(), 5);
    assert_eq!(&recs[1][1], "17");
    let summary: serde_json::Value = serde_json::from_str(&read(dir.path().join("summary.json"))).unwrap();
    assert_eq!(summary["strategy"], "opt_wco");
    assert_eq!(summary["config"]["policy"]["kind"], "mmse");
}

#[test]
fn compare_identical_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", LINEAR);
    let o = akrel(&[
        "compare", "--config", cfg.to_str().unwrap(), "--strategies", "u,opt_nco", "--replications", "2", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = read(dir.path().join("comparison.csv"));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "strategy,mean_n_call,cov_n_call,mean_eps,cov_eps");
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1].strip_prefix("u,").unwrap(), lines[2].strip_prefix("opt_nco,").unwrap());
}

#[test]
fn compare_single_replication() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", LINEAR);
    let o = akrel(&["compare", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let rows: serde_json::Value = serde_json::from_str(&read(dir.path().join("comparison.json"))).unwrap();
    assert_eq!(rows[0]["runs"], 1);
    assert_eq!(rows[0]["cov_n_call"], 0.0);
}

#[test]
fn grid_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", RASTRIGIN_SMALL);
    let o = akrel(&[
        "grid", "--config", cfg.to_str().unwrap(), "--max-iter", "3", "--resolution", "10", "--bounds=-4,4.5,-3,2",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("grid.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["x1", "x2", "mu", "sigma", "sigma_b2"]);
    let rows: Vec<Vec<f64>> =
        rdr.records().map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 100);
    assert_eq!((rows[0][0], rows[0][1]), (-4.0, -3.0));
    assert_eq!((rows[99][0], rows[99][1]), (4.5, 2.0));
    assert!(dir.path().join("doe.csv").exists());
}

#[test]
fn grid_rejects_other_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", LINEAR);
    let o = akrel(&["grid", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn external_evaluator() {
    let dir = tempfile::tempdir().unwrap();
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/linear_evaluator.py");
    let body = serde_json::json!({
        "limit_state": { "kind": "external", "command": ["python3", script], "dim": 1, "timeout_secs": 30 },
        "pool_size": 2000,
        "reference_pf": 0.022750131948179195,
    });
    let cfg = write_config(dir.path(), "c.json", &body.to_string());
    let o = akrel(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&read(dir.path().join("summary.json"))).unwrap();
    assert!(summary["pool_pf"].is_null());
    let pf = summary["final_pf"].as_f64().unwrap();
    // pool binomial error at N = 2000 is about 0.0033
    assert!((pf - 0.02275).abs() < 0.012, "{pf}");
}

#[test]
fn external_evaluator_failure() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{ "limit_state": { "kind": "external", "command": ["false"], "dim": 1, "timeout_secs": 5 }, "pool_size": 100 }"#;
    let cfg = write_config(dir.path(), "c.json", body);
    let o = akrel(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("evaluator"));
}
