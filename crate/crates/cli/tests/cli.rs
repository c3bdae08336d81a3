use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tfrt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfrt"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn toy_prints_22_and_writes_a_five_node_graph() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&tfrt(dir.path(), &["run", "toy", "-g", "--out", "o"]));
    assert!(out.lines().any(|l| l == "result: 22"), "{out}");
    let dot = fs::read_to_string(dir.path().join("o/toy_graph.dot")).unwrap();
    let nodes: Vec<&str> = dot
        .lines()
        .map(str::trim)
        .filter(|l| l.contains("[label=") && !l.contains("->"))
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(nodes, ["main", "1", "2", "3", "sync"]);
}

#[test]
fn trace_flag_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&tfrt(dir.path(), &["run", "sleep", "--tasks", "4", "--ms", "5", "--trace", "--out", "o"]));
    let csv = fs::read_to_string(dir.path().join("o/sleep_trace.csv")).unwrap();
    assert!(csv.lines().count() > 4);
    assert!(!dir.path().join("o/sleep_graph.dot").exists());
}

#[test]
fn kmeans_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["run", "kmeans", "--rows", "100000", "--k", "4", "--fragments", "8", "--workers", "4", "--seed", "7"];
    let centers = |o: String| o.lines().filter(|l| l.starts_with("center")).map(String::from).collect::<Vec<_>>();
    let a = centers(stdout(&tfrt(dir.path(), &args)));
    let b = centers(stdout(&tfrt(dir.path(), &args)));
    assert_eq!(a.len(), 4);
    assert_eq!(a, b);
}

#[test]
fn procs_backend_matches_threads() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["run", "linreg", "--rows", "4000", "--cols", "4", "--seed", "3"];
    let beta = |o: String| o.lines().find(|l| l.starts_with("beta:")).unwrap().to_string();
    let threads = beta(stdout(&tfrt(dir.path(), &base)));
    let mut procs = base.to_vec();
    procs.extend(["--backend", "procs", "--nodes", "2", "--workers", "2"]);
    assert_eq!(beta(stdout(&tfrt(dir.path(), &procs))), threads);
}

#[test]
fn zero_k_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = tfrt(dir.path(), &["run", "knn", "--k", "0"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("k must be at least 1"));
}

#[test]
fn uneven_node_split_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = tfrt(dir.path(), &["run", "toy", "--backend", "procs", "--workers", "3", "--nodes", "2"]);
    assert!(!o.status.success());
}

#[test]
fn printed_config_is_stable_and_reloadable() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["run", "knn", "--print-config", "--workers", "3", "--policy", "locality", "--retries", "2", "--seed", "9"];
    let a = stdout(&tfrt(dir.path(), &args));
    assert_eq!(a, stdout(&tfrt(dir.path(), &args)));
    assert!(a.contains("scheduler_policy = \"locality\""));

    fs::write(dir.path().join("c.toml"), &a).unwrap();
    let reloaded = stdout(&tfrt(dir.path(), &["run", "knn", "--print-config", "--config", "c.toml"]));
    assert_eq!(reloaded, a);
    let overridden = stdout(&tfrt(dir.path(), &["run", "knn", "--print-config", "--config", "c.toml", "--workers", "5"]));
    assert!(overridden.contains("worker_count = 5"));
}

#[test]
fn bad_config_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"worker_count": 2, "colour": "red"}"#).unwrap();
    let o = tfrt(dir.path(), &["run", "toy", "--config", "c.json"]);
    assert!(!o.status.success());
}

#[test]
fn bench_writes_csv_with_unit_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&tfrt(
        dir.path(),
        &["bench", "--app", "sleep", "--workers", "1,2", "--repetitions", "1", "--size", "4", "--ms", "10", "--out", "o"],
    ));
    assert!(out.contains("efficiency"));
    let csv = fs::read_to_string(dir.path().join("o/bench.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["app", "mode", "workers", "size", "wall_seconds", "efficiency"]);
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[1][..4], ["sleep", "strong", "1", "4"]);
    assert_eq!(rows[1][5].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn bench_rejects_worker_lists_not_starting_at_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = tfrt(dir.path(), &["bench", "--app", "noop", "--workers", "2,4", "--out", "o"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("start at 1"));
}
