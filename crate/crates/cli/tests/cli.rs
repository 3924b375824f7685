use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const QUICK: &str = "iterations = 3\ninitial_rollouts = 60\nrollouts_per_iter = 60\n";

fn hpsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hpsde"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("cfg.toml");
    fs::write(&path, format!("{QUICK}{extra}")).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("out");
    let o = hpsde(&[
        "run",
        "--config",
        &cfg,
        "--out-dir",
        out.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("iter,mean_return,n_options,ess,wall_ms")
    );
    assert_eq!(csv.lines().count(), 1 + 4);
    assert_eq!(
        fs::read_to_string(out.join("trace.jsonl"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    let saved = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(saved.contains("seed = 3"));
    assert!(out.join("policies.json").exists());
}

#[test]
fn threads_do_not_change_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let mut traces = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = hpsde(&[
            "run",
            "--config",
            &cfg,
            "--out-dir",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(o.status.success());
        traces.push(fs::read(out.join("trace.csv")).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let bad = write_config(dir.path(), "no_such_key = 1\n");
    assert_eq!(
        hpsde(&["run", "--config", &bad, "--out-dir", out])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        hpsde(&["run", "--env", "nowhere", "--out-dir", out])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        hpsde(&["run", "--config", "/does/not/exist.toml"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(hpsde(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hpsde(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_failure_exits_with_two_and_keeps_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    // A KL bound this tight is infeasible, so the first update fails.
    let cfg = write_config(
        dir.path(),
        "[update.method]\nkind = \"reps\"\nepsilon = 1e-30\n",
    );
    let out = dir.path().join("out");
    let o = hpsde(&["run", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let jsonl = fs::read_to_string(out.join("trace.jsonl")).unwrap();
    assert!(jsonl.lines().last().unwrap().contains("\"failure\""));
    assert_eq!(
        fs::read_to_string(out.join("trace.csv"))
            .unwrap()
            .lines()
            .count(),
        2
    );
}

#[test]
fn sweep_aggregates_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("sweep");
    let o = hpsde(&[
        "sweep",
        "--config",
        &cfg,
        "--out-dir",
        out.to_str().unwrap(),
        "--seeds",
        "0..3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for s in 0..3 {
        assert!(out.join(format!("seed-{s}/trace.csv")).exists());
    }
    let agg = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    let header = agg.lines().next().unwrap();
    assert!(
        header.starts_with("iter,runs,mean_return,std_return"),
        "{header}"
    );
    assert_eq!(agg.lines().count(), 1 + 4);
    assert!(agg.lines().nth(1).unwrap().starts_with("0,3,"));
}

#[test]
fn oracle_prints_a_number() {
    let o = hpsde(&["oracle", "--env", "toy2", "--contexts", "40"]);
    assert!(o.status.success());
    let v: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    assert!(v > 0.5 && v < 1.0, "{v}");
}

#[test]
fn eval_replays_saved_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("out");
    assert!(
        hpsde(&["run", "--config", &cfg, "--out-dir", out.to_str().unwrap()])
            .status
            .success()
    );
    let bundle = out.join("policies.json");
    let o = hpsde(&[
        "eval",
        "--bundle",
        bundle.to_str().unwrap(),
        "--episodes",
        "30",
        "--mean",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["episodes"], 30);
    assert!(v["mean_return"].as_f64().unwrap().is_finite());
    let again = hpsde(&[
        "eval",
        "--bundle",
        bundle.to_str().unwrap(),
        "--episodes",
        "30",
        "--mean",
    ]);
    assert_eq!(o.stdout, again.stdout);
    assert_eq!(
        hpsde(&["eval", "--bundle", "/does/not/exist.json"])
            .status
            .code(),
        Some(1)
    );
}
