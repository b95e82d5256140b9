use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diffgame_core::qlearn::TrainConfig;
use serde_json::Value;

fn diffgame(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffgame"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DIFFGAME_OUTPUT")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn usage_error(out: &Output) -> String {
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn json(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

const TINY: [&str; 8] = ["--algorithm", "idqn", "--env", "get_into_circle", "--steps", "300", "--set", "hidden=[16]"];

fn train_tiny(dir: &Path, seeds: &[u64]) -> Vec<PathBuf> {
    let mut args = vec!["train"];
    args.extend(TINY);
    let seed_strs: Vec<String> = seeds.iter().map(u64::to_string).collect();
    for s in &seed_strs {
        args.extend(["--seed", s.as_str()]);
    }
    args.extend(["--out", "runs"]);
    ok(&diffgame(&args, dir)).lines().map(|l| dir.join(l)).collect()
}

#[test]
fn train_writes_manifested_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = train_tiny(tmp.path(), &[0]);
    assert_eq!(dirs.len(), 1);
    let manifest = json(&fs::read_to_string(dirs[0].join("manifest.json")).unwrap());
    for a in manifest["artifacts"].as_array().unwrap() {
        assert!(dirs[0].join(a.as_str().unwrap()).is_file(), "{a}");
    }
    assert!(!fs::read_to_string(dirs[0].join("log.jsonl")).unwrap().is_empty());
    // the resolved config re-serialized equals the manifest snapshot
    let from_toml: TrainConfig = toml::from_str(&fs::read_to_string(dirs[0].join("config.toml")).unwrap()).unwrap();
    let snapshot: TrainConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
    assert_eq!(from_toml, snapshot);
    assert_eq!(snapshot.hidden, vec![16]);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 12);
}

#[test]
fn rerun_is_byte_identical_and_config_file_reproduces_the_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = train_tiny(a.path(), &[4]);
    let db = train_tiny(b.path(), &[4]);
    assert_eq!(da[0].strip_prefix(a.path()).unwrap(), db[0].strip_prefix(b.path()).unwrap());
    for f in ["log.jsonl", "model.json", "config.toml"] {
        assert_eq!(fs::read(da[0].join(f)).unwrap(), fs::read(db[0].join(f)).unwrap(), "{f}");
    }
    let cfg = da[0].join("config.toml");
    let c = tempfile::tempdir().unwrap();
    let out = ok(&diffgame(&["train", "--config", cfg.to_str().unwrap(), "--out", "runs"], c.path()));
    let dc = c.path().join(out.trim());
    assert_eq!(dc.strip_prefix(c.path()).unwrap(), da[0].strip_prefix(a.path()).unwrap());
    assert_eq!(fs::read(dc.join("log.jsonl")).unwrap(), fs::read(da[0].join("log.jsonl")).unwrap());
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("elsewhere");
    let mut args = vec!["train"];
    args.extend(TINY);
    let out = Command::new(env!("CARGO_BIN_EXE_diffgame"))
        .args(&args)
        .current_dir(tmp.path())
        .env("DIFFGAME_OUTPUT", &root)
        .output()
        .unwrap();
    let dir = PathBuf::from(ok(&out).trim());
    assert!(dir.starts_with(&root));
    assert!(dir.join("model.json").is_file());
}

#[test]
fn bad_training_input_is_a_usage_error_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let err = usage_error(&diffgame(&["train", "--algorithm", "idqn", "--env", "nowhere"], tmp.path()));
    assert!(err.contains("env") && err.contains("nowhere"), "{err}");
    let err = usage_error(&diffgame(&["train", "--algorithm", "ppo", "--env", "get_into_circle"], tmp.path()));
    assert!(err.contains("algorithm"), "{err}");
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "algorithm = \"idqn\"\nenv = \"get_into_circle\"\nlearning_rate = 0.1\n").unwrap();
    let err = usage_error(&diffgame(&["train", "--config", cfg.to_str().unwrap()], tmp.path()));
    assert!(err.contains("learning_rate"), "{err}");
    let err = usage_error(&diffgame(
        &["train", "--algorithm", "idqn", "--env", "get_into_circle", "--set", "u_mesh=QQ(1)"],
        tmp.path(),
    ));
    assert!(err.contains("QQ"), "{err}");
    usage_error(&diffgame(&["train", "--env", "get_into_circle"], tmp.path()));
    usage_error(&diffgame(&["frobnicate"], tmp.path()));
}

#[test]
fn solve_counterexample_reports_both_values() {
    let tmp = tempfile::tempdir().unwrap();
    let s = json(&ok(&diffgame(&["solve", "--env", "counterexample", "--out", "r"], tmp.path())));
    assert!((s["upper_at_x0"].as_f64().unwrap() - 1.0).abs() <= 1e-9);
    assert!((s["lower_at_x0"].as_f64().unwrap() + 1.0).abs() <= 1e-9);
    let dir = fs::read_dir(tmp.path().join("r/solve")).unwrap().next().unwrap().unwrap().path();
    for f in ["upper.dgvg", "lower.dgvg", "summary.json", "gaps.csv"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let grid = diffgame_core::ValueGrid::read_binary(fs::File::open(dir.join("upper.dgvg")).unwrap()).unwrap();
    assert!((grid.value(0, &[0.0]) - 1.0).abs() <= 1e-9);
}

#[test]
fn solve_square_default_matches_known_value() {
    let tmp = tempfile::tempdir().unwrap();
    let s = json(&ok(&diffgame(&["solve", "--env", "get_into_square", "--out", "r"], tmp.path())));
    assert!((s["upper_at_x0"].as_f64().unwrap() - 1.0).abs() <= 0.2, "{s}");
}

#[test]
fn solve_rejects_high_dimensional_games() {
    let tmp = tempfile::tempdir().unwrap();
    let err = usage_error(&diffgame(&["solve", "--env", "homicidal_chauffeur"], tmp.path()));
    assert!(err.contains("dimension"), "{err}");
    let err = usage_error(&diffgame(&["solve", "--env", "get_into_circle", "--nodes", "11"], tmp.path()));
    assert!(err.contains("grid"), "{err}");
}

#[test]
fn grid_greedy_policies_evaluate_to_a_tight_interval() {
    let tmp = tempfile::tempdir().unwrap();
    let row = json(&ok(&diffgame(
        &["evaluate", "--grid-policies", "get_into_circle", "--method", "grid", "--method", "random", "--random-sequences", "200", "--out", "r"],
        tmp.path(),
    )));
    let (u, v) = (row["best_u"].as_f64().unwrap(), row["best_v"].as_f64().unwrap());
    assert!(v <= 0.0 && 0.0 <= u && u - v <= 0.2, "[{v}, {u}]");
}

#[test]
fn evaluate_and_report_over_five_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = train_tiny(tmp.path(), &[0, 1, 2, 3, 4]);
    let usage = usage_error(&diffgame(&["evaluate", dirs[0].to_str().unwrap()], tmp.path()));
    assert!(usage.contains("method"), "{usage}");
    let mut args = vec!["evaluate", "--method", "random", "--random-sequences", "20", "--out", "r"];
    let names: Vec<&str> = dirs.iter().map(|d| d.to_str().unwrap()).collect();
    args.extend(&names);
    ok(&diffgame(&args, tmp.path()));
    let eval_dir = fs::read_dir(tmp.path().join("r/eval")).unwrap().next().unwrap().unwrap().path();
    let report = json(&fs::read_to_string(eval_dir.join("report.json")).unwrap());
    assert_eq!(report["maximum_values"].as_array().unwrap().len(), 5);
    assert_eq!(report["minimum_values"].as_array().unwrap().len(), 5);

    let table = ok(&diffgame(&["report", eval_dir.to_str().unwrap()], tmp.path()));
    let mut rdr = csv::Reader::from_reader(table.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    let headers = rdr.headers().unwrap().clone();
    for col in ["best_u", "mean_u", "worst_u", "best_v", "mean_v", "worst_v"] {
        let k = headers.iter().position(|h| h == col).unwrap();
        rows[0][k].parse::<f64>().unwrap();
    }
    assert_eq!(&rows[0][headers.iter().position(|h| h == "runs").unwrap()], "5");

    ok(&diffgame(&["report", eval_dir.to_str().unwrap(), "--out", "agg"], tmp.path()));
    let series = fs::read_to_string(tmp.path().join("agg/series.csv")).unwrap();
    assert_eq!(series.lines().count(), 6);

    let missing = tmp.path().join("no_such_dir");
    let err = usage_error(&diffgame(&["report", missing.to_str().unwrap()], tmp.path()));
    assert!(err.contains("no_such_dir"), "{err}");
}

#[test]
fn check_isaacs_separates_games() {
    let tmp = tempfile::tempdir().unwrap();
    for env in ["get_into_circle", "get_into_square", "escape_from_zero"] {
        let r = json(&ok(&diffgame(&["check-isaacs", "--env", env, "--samples", "300"], tmp.path())));
        assert_eq!(r["max_gap"].as_f64().unwrap(), 0.0, "{env}");
    }
    let r = json(&ok(&diffgame(
        &["check-isaacs", "--env", "counterexample", "--samples", "300", "--u-mesh", "LM(-pi,pi,10)"],
        tmp.path(),
    )));
    // directions are scaled up to norm 10, so the gap reaches 2 * 10
    assert!((r["max_gap"].as_f64().unwrap() - 20.0).abs() <= 1e-9, "{r}");
    let err = usage_error(&diffgame(&["check-isaacs", "--env", "counterexample", "--samples", "0"], tmp.path()));
    assert!(err.contains("empty"), "{err}");
}
