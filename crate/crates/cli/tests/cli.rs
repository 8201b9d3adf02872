use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn she(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_she"));
    c.args(args).env_remove("SHE_SEED");
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_owned).collect())
        .collect()
}

fn write_manifest(dir: &Path, body: &str) -> String {
    let p = dir.join("run.json");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{
    "kernel": {"kind": "simple", "dim": 1},
    "box": {"extents": [17]},
    "sigma": {"kind": "linear", "q": 0.5},
    "u0": {"kind": "delta"},
    "solver": {"dt": 0.01, "horizon": 0.5, "scheme": "split", "record_every": 0.1, "snapshot_times": [0.5]},
    "seed": 11,
    "replicas": 8,
    "experiments": {
        "moments": {"ks": [2], "times": [0.5], "methods": ["field-mc", "feynman-kac", "renewal"], "renewal_intervals": 64, "renewal_tol": 1e-3}
    }
}"#;

#[test]
fn pbar_column_is_monotone() {
    let out = she(&["kernel", "--pbar", "--tmax", "5"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# manifest_hash="));
    let values: Vec<f64> = csv_rows(&text).iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(values.len(), 51);
    assert!((values[0] - 1.0).abs() < 1e-10, "{}", values[0]);
    assert!(values.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn identical_manifests_give_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = she(&["simulate", &m, "--out", out.to_str().unwrap()], &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = she(&["--threads", "3", "moments", &m, "--out", a.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = she(&["--threads", "1", "moments", &m, "--out", b.to_str().unwrap()], &[]);
    assert!(o.status.success());
    for f in ["trajectories.csv", "snapshots.csv", "moments.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let o = she(&["verify", "--compare", a.to_str().unwrap(), b.to_str().unwrap()], &[]);
    assert!(o.status.success());
    let moments = csv_rows(&fs::read_to_string(a.join("moments.csv")).unwrap());
    let methods: Vec<&str> = moments.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(methods, ["field-mc", "feynman-kac", "renewal"]);
}

#[test]
fn schema_violation_exits_2_with_paths() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), &SMALL.replace(r#""dt": 0.01"#, r#""dt": -0.01"#).replace(r#""seed": 11,"#, r#""seed": 11, "extra": 1,"#));
    let o = she(&["simulate", &m], &[]);
    assert_eq!(o.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let paths: Vec<&str> = v["errors"].as_array().unwrap().iter().map(|e| e["path"].as_str().unwrap()).collect();
    assert!(paths.contains(&"solver.dt") && paths.contains(&"extra"), "{paths:?}");
}

#[test]
fn env_seed_overrides_and_is_stamped() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(she(&["simulate", &m, "--out", a.to_str().unwrap()], &[]).status.success());
    assert!(she(&["simulate", &m, "--out", b.to_str().unwrap()], &[("SHE_SEED", "12")]).status.success());
    let stamp: Value = serde_json::from_str(&fs::read_to_string(b.join("stamp.json")).unwrap()).unwrap();
    assert_eq!(stamp["seed"], 12);
    assert_eq!(stamp["seed_source"], "SHE_SEED");
    // different seeds give different hashes, so comparison is refused
    let o = she(&["verify", "--compare", a.to_str().unwrap(), b.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(she(&["simulate", &m], &[("SHE_SEED", "x")]).status.code(), Some(2));
}

#[test]
fn renewal_from_grids_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let n = 256;
    let step = 2.0 / n as f64;
    let grid = |f: &dyn Fn(f64) -> f64| {
        let mut s = String::from("t,value\n");
        for i in 0..=n {
            let t = i as f64 * step;
            s += &format!("{t},{}\n", f(t));
        }
        s
    };
    let (g, h) = (dir.path().join("g.csv"), dir.path().join("h.csv"));
    fs::write(&g, grid(&|t| (-t).exp())).unwrap();
    fs::write(&h, grid(&|t| 0.5 * (-t).exp())).unwrap();
    let o = she(&["renewal", "--g", g.to_str().unwrap(), "--h", h.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&String::from_utf8(o.stdout).unwrap());
    let err = rows
        .iter()
        .map(|r| {
            let (t, f): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
            (f - (-t / 2.0).exp()).abs()
        })
        .fold(0.0, f64::max);
    // trapezoid error is O(step^2)
    assert!(err < step * step, "{err}");
}

#[test]
fn classify_flags_recurrent_walks() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), &SMALL.replace(r#""q": 0.5"#, r#""q": 2.0"#));
    let o = she(&["classify", &m, "--out", dir.path().join("c").to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("c/classify.json")).unwrap()).unwrap();
    assert_eq!(v["report"]["regime"], "no-dissipation-criterion");
}

#[test]
fn missing_experiment_block_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), SMALL);
    let o = she(&["rn-test", &m, "--out", dir.path().join("r").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn smoke_suite_passes_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = she(&["verify", "--suite", "smoke", "--out", a.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let o = she(&["--threads", "2", "verify", "--suite", "smoke", "--out", b.to_str().unwrap()], &[]);
    assert!(o.status.success());
    let o = she(&["verify", "--compare", a.to_str().unwrap(), b.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
