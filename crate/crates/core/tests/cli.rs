
use matchpoint::io::{load_csv, save_csv};
use matchpoint::{RngStream, Sample};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn matchpoint(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matchpoint"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_schema(file: &str, value: &Value) {
    let errors = schema::validate(&schema::load(file), value);
    assert!(errors.is_empty(), "{file}: {errors:#?}");
}

fn simulated(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let cfg = dir.join("sim.json");
    std::fs::write(&cfg, r#"{"mode": "simulate", "dgp": {"kind": "ordered_choice"}}"#).unwrap();
    let out = dir.join(format!("data_{seed}.csv"));
    let o = matchpoint(
        &["simulate", "--config", "sim.json", "--out", out.to_str().unwrap(), "--n", &n.to_string(), "--seed", &seed.to_string()],
        dir,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    out
}

/// Binary treatment from a probit index `0.4 x + 0.8 z`, outcome slopes 1
/// and 2, correlated errors.
fn binary_sample(n: usize, seed: u64) -> Sample {
    let mut rng = RngStream::new(seed);
    let (mut y, mut d, mut x, mut z) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let xi = rng.uniform_range(-3.0, 3.0);
        let zi = rng.bernoulli(0.5) as u32;
        let v = rng.standard_normal();
        let u = 0.5 * v + 0.75f64.sqrt() * rng.standard_normal();
        let di = if v < 0.4 * xi + 0.8 * zi as f64 { 2 } else { 1 };
        y.push(di as f64 * (xi + 1.0) + u);
        d.push(di);
        x.push(xi);
        z.push(zi);
    }
    Sample::new(y, d, x, z).unwrap()
}

#[test]
fn simulate_is_deterministic_and_loads() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulated(dir.path(), 500, 3);
    let first = std::fs::read(&a).unwrap();
    let b = simulated(dir.path(), 500, 3);
    assert_eq!(first, std::fs::read(&b).unwrap());
    let s = load_csv(&a).unwrap();
    assert_eq!((s.n(), s.num_levels()), (500, 3));

    let cfg = dir.path().join("sim.json");
    let o = matchpoint(&["simulate", "--config", cfg.to_str().unwrap(), "--out", "x.csv", "--json", "x.json"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_schema("simulate_summary.schema.json", &json(&dir.path().join("x.json")));
}

#[test]
fn match_reports_all_three_tests() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), 2000, 11);
    let o = matchpoint(
        &["match", "--data", data.to_str().unwrap(), "--x0", "0", "--x0", "-0.3", "--out", "fit.json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    for name in ["J_x  =", "J_x1 =", "J_x2 ="] {
        assert_eq!(text.matches(name).count(), 2, "{text}");
    }
    assert!(text.contains("p="));
    let v = json(&dir.path().join("fit.json"));
    assert_schema("estimate_output.schema.json", &v);
    let recs = v.as_array().unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[1]["x0"], -0.3);
    assert!(recs[0]["separable"].is_null());
}

#[test]
fn fit_subcommands_write_schema_valid_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), 2000, 12);
    let d = data.to_str().unwrap();
    let o = matchpoint(&["fit-separable", "--data", d, "--x0", "0", "--out", "sep.json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("Over-Id J_SP = "));
    let v = json(&dir.path().join("sep.json"));
    assert_schema("estimate_output.schema.json", &v);
    assert_eq!(v[0]["separable"]["m_hat"].as_array().unwrap().len(), 3);
    assert_eq!(v[0]["separable"]["j_sp"]["df"], 1);

    let o = matchpoint(
        &["fit-nonseparable", "--data", d, "--x0", "0", "--nodes", "10", "--u0", "0.5", "--out", "nsp.json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("J_NSP ="));
    let v = json(&dir.path().join("nsp.json"));
    assert_schema("estimate_output.schema.json", &v);
    let g = v[0]["nonseparable"]["g_hat"].as_array().unwrap();
    assert_eq!(g.len(), 10);
}

#[test]
fn binary_treatment_without_matching_is_just_identified() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("binary.csv");
    save_csv(&binary_sample(2000, 5), &path).unwrap();
    let p = path.to_str().unwrap();
    let o = matchpoint(&["fit-separable", "--data", p, "--x0", "0", "--no-matching", "--out", "a.json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("Over-Id J_SP = N.A."), "{}", stdout(&o));
    let v = json(&dir.path().join("a.json"));
    assert_schema("estimate_output.schema.json", &v);
    assert!(v[0]["matching"].is_null());
    assert!(v[0]["separable"]["j_sp"].is_null());
    assert_eq!(v[0]["separable"]["points"].as_array().unwrap().len(), 2);

    let o = matchpoint(&["fit-separable", "--data", p, "--x0", "0", "--out", "b.json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&dir.path().join("b.json"));
    assert_eq!(v[0]["separable"]["points"].as_array().unwrap().len(), 4);
    assert!(!v[0]["separable"]["j_sp"].is_null());
}

#[test]
fn config_file_drives_estimation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"mode": "fit-separable", "dgp": {"kind": "ordered_choice"}, "n": 1500, "seed": 9, "x0": [0.2], "out": "cfg.json", "two_step": false}"#,
    )
    .unwrap();
    let o = matchpoint(&["fit-separable", "--config", "run.json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&dir.path().join("cfg.json"));
    assert_eq!(v[0]["x0"], 0.2);
    assert_eq!(v[0]["separable"]["two_step"], false);
    assert_schema("run_config.schema.json", &json(&cfg));

    let o = matchpoint(&["match", "--config", "run.json"], dir.path());
    assert_eq!(o.status.code(), Some(1), "mode mismatch");
    assert!(stderr(&o).contains("config"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = matchpoint(&["match", "--x0", "0", "--bogus", "--out", "never.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    assert!(!dir.path().join("never.json").exists());

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "y,d,x,z\n1,1,0,0\n1,0,0,1\n").unwrap();
    let o = matchpoint(&["match", "--data", bad.to_str().unwrap(), "--x0", "0", "--out", "o.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("row 3") && stderr(&o).contains("d"), "{}", stderr(&o));

    let o = matchpoint(&["match", "--data", "missing.csv", "--x0", "0", "--out", "o.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));

    let data = simulated(dir.path(), 2000, 4);
    let o = matchpoint(&["match", "--data", data.to_str().unwrap(), "--x0", "0"], dir.path());
    assert_eq!(o.status.code(), Some(1), "JSON output path is required");

    // a sparse file: every local cell has too little data
    let sparse = dir.path().join("sparse.csv");
    let mut text = String::from("y,d,x,z\n");
    for i in 0..40 {
        let x = -3.0 + 6.0 * i as f64 / 39.0;
        text.push_str(&format!("{},{},{},{}\n", i as f64 * 0.1, 1 + i % 3, x, i % 2));
    }
    std::fs::write(&sparse, text).unwrap();
    let o = matchpoint(&["match", "--data", sparse.to_str().unwrap(), "--x0", "0", "--out", "s.json"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn montecarlo_writes_table_and_report() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("mc.json"), r#"{"n": 800, "reps": 4, "grid_size": 100}"#).unwrap();
    let o = matchpoint(
        &["montecarlo", "--config", "mc.json", "--out", "t.md", "--csv", "t.csv", "--json", "r.json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let md = std::fs::read_to_string(dir.path().join("t.md")).unwrap();
    assert!(md.contains("| Target | Truth | Average | Bias² | Variance | MSE | 90% | 95% | 99% |"));
    for name in ["| x_m1 |", "| m_1 |", "| m_3 |", "| J_SP |"] {
        assert!(md.contains(name), "{md}");
    }
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(csv.starts_with("kind,name,truth"));
    let report = json(&dir.path().join("r.json"));
    assert_schema("mc_report.schema.json", &report);
    assert_eq!(report["records"].as_array().unwrap().len(), 4);
}
