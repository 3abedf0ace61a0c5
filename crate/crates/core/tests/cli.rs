use std::path::{Path, PathBuf};
use std::process::Command;

use lowrank::harness::cli::{EXIT_CONFIG, EXIT_OK};
use lowrank::harness::cli_main;
use serde_json::json;

fn write_config(dir: &Path, name: &str, cfg: &serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("lowrank").chain(args.iter().copied());
    let code = cli_main(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// Data rows of a CSV document: everything after the `#` lines and the header.
fn data_rows(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

fn small_convergence(max_iters: usize) -> serde_json::Value {
    json!({
        "experiment": "convergence",
        "problem": { "kind": "quadratic-II", "d1": 8, "r": [1, 2], "p_fail": 0.1 },
        "solver": { "name": "polyak", "max_iters": max_iters },
        "trials": 2,
        "base_seed": 5,
        "output": { "prefix": "conv" }
    })
}

#[test]
fn missing_config_exits_with_config_code_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let (code, _, err) = run(&["converge", "--config", missing.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("nope.json"), "{err}");
}

#[test]
fn binary_reports_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_lowrank");
    let status = Command::new(exe).arg("selftest").output().unwrap();
    assert_eq!(status.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&status.stdout));
    let status = Command::new(exe).args(["phase", "--config", "/nonexistent/cfg.json"]).output().unwrap();
    assert_eq!(status.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&status.stderr).contains("/nonexistent/cfg.json"));
}

#[test]
fn selftest_passes() {
    let (code, out, _) = run(&["selftest"]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(!out.contains("FAIL"));
}

#[test]
fn single_cell_phase_grid_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": "phase-transition",
        "problem": { "kind": "bilinear", "d1": 10, "r": 1, "p_fail": 0.1 },
        "solver": { "name": "polyak", "max_iters": 300 },
        "trials": 2,
        "output": { "prefix": "phase" }
    });
    let path = write_config(dir.path(), "phase.json", &cfg);
    let (code, _, err) = run(&["phase", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let text = std::fs::read_to_string(dir.path().join("phase.csv")).unwrap();
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "axis1,axis2,successes,trials,median_iters");
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 1, "{text}");
    assert_eq!(rows[0].split(',').nth(3), Some("2"));
    assert!(dir.path().join("phase.svg").exists());
}

#[test]
fn single_trial_success_count_is_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": "phase-transition",
        "problem": { "kind": "quadratic-II", "d1": 8, "r": [1, 2], "p_fail": [0.0, 0.3] },
        "solver": { "name": "geometric", "lambda": 1.0, "q": 0.95, "max_iters": 200 },
        "trials": 1
    });
    let path = write_config(dir.path(), "p.json", &cfg);
    let (code, _, err) = run(&["phase", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let text = std::fs::read_to_string(dir.path().join("phase-transition.csv")).unwrap();
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 4);
    for row in rows {
        let s: usize = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!(s <= 1, "{row}");
    }
}

#[test]
fn one_iterate_budget_records_only_the_start() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "c.json", &small_convergence(1));
    let (code, _, err) = run(&["converge", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let text = std::fs::read_to_string(dir.path().join("conv.csv")).unwrap();
    let header: Vec<&str> = text.lines().find(|l| !l.starts_with('#')).unwrap().split(',').collect();
    let k_col = header.iter().position(|h| *h == "k").unwrap();
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.split(',').nth(k_col) == Some("0")));
}

#[test]
fn reruns_are_byte_identical_without_timing() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "c.json", &small_convergence(60));
    let outputs: Vec<(String, String)> = ["a", "b"]
        .iter()
        .map(|sub| {
            let out = dir.path().join(sub);
            std::fs::create_dir(&out).unwrap();
            let (code, _, err) = run(&[
                "converge",
                "--config",
                path.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--no-timing",
                "--threads",
                if *sub == "a" { "1" } else { "2" },
            ]);
            assert_eq!(code, EXIT_OK, "{err}");
            (
                std::fs::read_to_string(out.join("conv.csv")).unwrap(),
                std::fs::read_to_string(out.join("conv_summary.csv")).unwrap(),
            )
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
    assert!(data_rows(&outputs[0].0).len() > 4);
}

#[test]
fn seed_override_changes_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "c.json", &small_convergence(5));
    let mut texts = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(seed);
        std::fs::create_dir(&out).unwrap();
        let args = ["converge", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--no-timing", "--seed", seed];
        assert_eq!(run(&args).0, EXIT_OK);
        texts.push(std::fs::read_to_string(out.join("conv.csv")).unwrap());
    }
    assert_ne!(texts[0], texts[1]);
}

#[test]
fn empty_rip_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": "rip-audit",
        "problem": { "kind": "gaussian-sensing", "d1": 10, "r": [] }
    });
    let path = write_config(dir.path(), "rip.json", &cfg);
    let (code, _, err) = run(&["rip", "--config", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("problem.r"), "{err}");
}

#[test]
fn rip_audit_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": "rip-audit",
        "problem": { "kind": ["quadratic-I", "quadratic-II"], "d1": 10, "r": [1, 2], "p_fail": 0.1 },
        "audit": { "n_samples": 50 },
        "trials": 1
    });
    let path = write_config(dir.path(), "rip.json", &cfg);
    let (code, _, err) = run(&["rip", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let text = std::fs::read_to_string(dir.path().join("rip-audit.csv")).unwrap();
    assert_eq!(data_rows(&text).len(), 4);
}

#[test]
fn config_errors_point_at_the_offending_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_convergence(10);
    cfg["problem"]["dimension"] = json!(3);
    let path = write_config(dir.path(), "bad.json", &cfg);
    let (code, _, err) = run(&["converge", "--config", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("dimension") && err.contains("line"), "{err}");

    let path = write_config(dir.path(), "wrong.json", &small_convergence(10));
    let (code, _, _) = run(&["phase", "--config", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
    let (code, _, _) = run(&["converge", "--config", path.to_str().unwrap(), "--threads", "0"]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn tolerance_sweep_reports_plateaus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": "tolerance-sweep",
        "problem": { "kind": "quadratic-II", "d1": 10, "r": 1, "p_fail": 0.1, "dense_noise": [0.0, 0.1, 0.01] },
        "solver": { "name": "polyak", "max_iters": 300 },
        "trials": 1,
        "init": 0.3
    });
    let path = write_config(dir.path(), "t.json", &cfg);
    let (code, _, err) = run(&["tolerance", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--no-timing"]);
    assert_eq!(code, EXIT_OK, "{err}");
    let text = std::fs::read_to_string(dir.path().join("tolerance-sweep_plateaus.csv")).unwrap();
    let header: Vec<&str> = text.lines().find(|l| !l.starts_with('#')).unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows: Vec<Vec<&str>> = data_rows(&text).iter().map(|r| r.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let clean = rows.iter().find(|r| r[col("delta")].parse::<f64>().unwrap() == 0.0).unwrap();
    assert_eq!(clean[col("status")], "converged");
    let level = |d: f64| {
        rows.iter().find(|r| r[col("delta")].parse::<f64>().unwrap() == d).unwrap()[col("plateau")].parse::<f64>().unwrap()
    };
    assert!(level(0.1) > level(0.01));
}
