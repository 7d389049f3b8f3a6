use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use svc_edge_cache::config::ExperimentConfig;
use svc_edge_cache::policy::{check_feasibility, PlacementFile, RandomPlacement};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_svc-cache");

/// A scaled-down config that keeps every command under a second.
const SMALL: &str = r#"{
  "library": {"file_count": 12},
  "cache": {"d2d_mbit": 40, "sbs_mbit": 100},
  "delay": {"rate_samples": 2000},
  "trials": {"n_trials": 2000}
}"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("SVC_CACHE_THREADS", "2")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn optimize(dir: &Path, config: &Path, out: &str) -> PathBuf {
    let out = dir.join(out);
    let o = run(&["optimize", "--config", s(config), "--out", s(&out)]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    out
}

/// Data rows of a CSV output as field vectors, skipping the header block.
fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .unwrap();
    reader
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn find<'a>(rows: &'a [Vec<String>], policy: &str, mode: &str) -> &'a [String] {
    rows.iter()
        .find(|r| r[0] == policy && r[1] == mode)
        .unwrap_or_else(|| panic!("no {policy}/{mode} row"))
}

#[test]
fn optimize_default_config_writes_feasible_placement() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "c.json", "{}");
    let out = dir.path().join("opt");
    let o = run(&["optimize", "--config", s(&config), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("final objective"));

    let cfg = ExperimentConfig::default();
    let lib = cfg.library().unwrap();
    let file: PlacementFile =
        serde_json::from_str(&fs::read_to_string(out.join("placement.json")).unwrap()).unwrap();
    let provenance = file.provenance.clone().unwrap();
    assert_eq!(provenance["config"]["cache"]["sbs_mbit"], 500.0);
    let placement = file.into_placement(&lib).unwrap();
    let caps = cfg.capacities();
    assert!(
        check_feasibility(&placement.d2d, &lib, caps.d2d_bits)
            .unwrap()
            .feasible
    );
    assert!(
        check_feasibility(&placement.sbs, &lib, caps.sbs_bits)
            .unwrap()
            .feasible
    );

    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("# svc-cache optimize\n# config: {"));
    assert!(trace.contains("\n# seed: 1\n"));
}

#[test]
fn negative_cache_size_is_rejected_with_field_path() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "c.json", r#"{"cache": {"sbs_mbit": -1}}"#);
    let o = run(&[
        "optimize",
        "--config",
        s(&config),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cache.sbs_mbit"));
}

#[test]
fn malformed_inputs_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "c.json", SMALL);
    let unknown = write(dir.path(), "u.json", r#"{"cache": {"sbs": 1}}"#);
    let out = s(&dir.path().join("x.csv")).to_string();
    let cases: Vec<Vec<&str>> = vec![
        vec![
            "sweep",
            "--config",
            s(&config),
            "--axis",
            "power",
            "--out",
            &out,
        ],
        vec![
            "sweep",
            "--config",
            s(&config),
            "--axis",
            "backhaul_rate",
            "--mode",
            "burst",
            "--out",
            &out,
        ],
        vec!["optimize", "--config", s(&unknown), "--out", &out],
        vec!["optimize", "--config", "/nonexistent/c.json", "--out", &out],
        vec!["frobnicate"],
    ];
    for args in cases {
        assert_eq!(run(&args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn zero_thread_cap_is_rejected() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "c.json", SMALL);
    let o = Command::new(BIN)
        .args([
            "optimize",
            "--config",
            s(&config),
            "--out",
            s(&dir.path().join("o")),
        ])
        .env("SVC_CACHE_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn optimizer_abort_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let config = write(
        dir.path(),
        "c.json",
        r#"{
          "library": {"file_count": 4},
          "tiers": {"d2d": {"density_per_m2": 1e300, "radius_m": 1e300, "window_radius_m": 1e300}},
          "delay": {"rate_override_mbps": {"d2d": 40, "sbs": 30, "mbs": 20}}
        }"#,
    );
    let out = dir.path().join("o");
    let o = run(&["optimize", "--config", s(&config), "--out", s(&out)]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(out.join("trace.csv").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "c.json", SMALL);
    let a = optimize(dir.path(), &config, "a");
    let b = optimize(dir.path(), &config, "b");
    for name in ["placement.json", "trace.csv"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let eval = |out: &str, threads: &str| {
        let out = dir.path().join(out);
        let o = Command::new(BIN)
            .args(["evaluate", "--config", s(&config), "--out", s(&out)])
            .args(["--placement", s(&a.join("placement.json"))])
            .env("SVC_CACHE_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0));
        fs::read(out).unwrap()
    };
    assert_eq!(eval("e1.csv", "1"), eval("e2.csv", "3"));
}

#[test]
fn evaluate_optimized_placement_beats_mplp() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "c.json", SMALL);
    let opt = optimize(dir.path(), &config, "opt");
    let out = dir.path().join("eval.csv");
    let o = run(&[
        "evaluate",
        "--config",
        s(&config),
        "--placement",
        s(&opt.join("placement.json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let rows = rows(&out);
    assert_eq!(rows.len(), 4 * 3);
    let analytic = |p: &str| find(&rows, p, "sequential")[2].parse::<f64>().unwrap();
    assert!(analytic("random-svc") <= analytic("mplp-svc"));
    for r in rows.iter().filter(|r| r[1] != "sequential") {
        assert!(r[2].is_empty());
    }
}

#[test]
fn evaluate_zero_placement_matches_no_cache() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "c.json", SMALL);
    let cfg = ExperimentConfig::from_json(SMALL).unwrap();
    let lib = cfg.library().unwrap();
    let zero = RandomPlacement::zeros(&lib);
    let placement = write(
        dir.path(),
        "zero.json",
        &serde_json::to_string(&PlacementFile::new(&lib, zero)).unwrap(),
    );
    let out = dir.path().join("eval.csv");
    let o = run(&[
        "evaluate",
        "--config",
        s(&config),
        "--placement",
        s(&placement),
        "--out",
        s(&out),
        "--mode",
        "sequential",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let rows = rows(&out);
    assert_eq!(rows.len(), 4);
    let zero = find(&rows, "random-svc", "sequential");
    let none = find(&rows, "no-cache", "sequential");
    let (a, b): (f64, f64) = (zero[2].parse().unwrap(), none[2].parse().unwrap());
    assert!((a - b).abs() <= 1e-12 * b, "{a} vs {b}");
    // identical trials with nothing cached anywhere
    assert_eq!(zero[3], none[3]);
}

#[test]
fn evaluate_rejects_placement_for_another_library() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "c.json", SMALL);
    let other =
        ExperimentConfig::from_json(r#"{"library": {"file_count": 12, "svc_overhead": 0.2}}"#)
            .unwrap()
            .library()
            .unwrap();
    let placement = write(
        dir.path(),
        "p.json",
        &serde_json::to_string(&PlacementFile::new(&other, RandomPlacement::zeros(&other)))
            .unwrap(),
    );
    let o = run(&[
        "evaluate",
        "--config",
        s(&config),
        "--placement",
        s(&placement),
        "--out",
        s(&dir.path().join("e.csv")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fingerprint"));
}

#[test]
fn halving_trials_grows_stderr_by_sqrt_two() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "c.json", SMALL);
    let cfg = ExperimentConfig::from_json(SMALL).unwrap();
    let lib = cfg.library().unwrap();
    let mplp = svc_edge_cache::delaymodel::mplp_placement(&lib, &cfg.capacities());
    let placement = write(
        dir.path(),
        "p.json",
        &serde_json::to_string(&PlacementFile::new(&lib, mplp)).unwrap(),
    );
    let stderr_at = |n: &str| {
        let out = dir.path().join(format!("e{n}.csv"));
        let o = run(&[
            "evaluate",
            "--config",
            s(&config),
            "--placement",
            s(&placement),
            "--out",
            s(&out),
            "--mode",
            "parallel_ilt",
            "--trials",
            n,
            "--seed",
            "99",
        ]);
        assert_eq!(o.status.code(), Some(0));
        let text = fs::read_to_string(&out).unwrap();
        assert!(text.contains("# seed: 99\n"));
        find(&rows(&out), "random-svc", "parallel_ilt")[4]
            .parse::<f64>()
            .unwrap()
    };
    let ratio = stderr_at("10000") / stderr_at("20000");
    assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn sweep_single_point_gives_one_row_per_policy_and_mode() {
    let dir = TempDir::new().unwrap();
    let config = write(
        dir.path(),
        "c.json",
        r#"{
          "library": {"file_count": 12},
          "delay": {"rate_samples": 2000},
          "trials": {"n_trials": 500},
          "sweep": {"sbs_cache_mbit": [500]}
        }"#,
    );
    let out = dir.path().join("sweep.csv");
    let o = run(&[
        "sweep",
        "--config",
        s(&config),
        "--axis",
        "sbs_cache_size",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(&out).unwrap();
    let header = text.lines().nth(1).unwrap();
    assert!(header.contains("\"d2d_mbit\":200.0"));
    assert!(header.contains("\"base_size_mbit\":50.0"));
    let rows = rows(&out);
    assert_eq!(rows.len(), 4 * 3);
    assert!(rows
        .iter()
        .all(|r| r[0] == "sbs_cache_size" && r[1] == "500"));
}

#[test]
fn backhaul_sweep_is_monotone_for_random_caching() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "c.json", SMALL);
    let out = dir.path().join("sweep.csv");
    let o = run(&[
        "sweep",
        "--config",
        s(&config),
        "--axis",
        "backhaul_rate",
        "--out",
        s(&out),
        "--mode",
        "sequential",
        "--trials",
        "200",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let rows = rows(&out);
    let delays: Vec<f64> = rows
        .iter()
        .filter(|r| r[2] == "random-svc")
        .map(|r| r[4].parse().unwrap())
        .collect();
    assert_eq!(delays.len(), 5);
    assert!(delays.windows(2).all(|w| w[1] <= w[0]), "{delays:?}");
}

#[test]
fn placement_file_rejects_unknown_fields() {
    let lib = ExperimentConfig::from_json(SMALL)
        .unwrap()
        .library()
        .unwrap();
    let mut value =
        serde_json::to_value(PlacementFile::new(&lib, RandomPlacement::zeros(&lib))).unwrap();
    value["extra"] = serde_json::json!(1);
    assert!(serde_json::from_value::<PlacementFile>(value).is_err());
}
