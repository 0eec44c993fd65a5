use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcra::cli::{
    parse_trace_csv, AllocationFile, CheckRecord, ErrorRecord, OptimizeRecord, OracleRecord, SpectrumRecord, StateDump,
};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn mcra(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcra")).args(args).output().expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn error_record(o: &Output) -> ErrorRecord {
    toml::from_str(&String::from_utf8(o.stderr.clone()).unwrap()).expect("error record")
}

#[test]
fn spectrum_on_k4() {
    let dir = tempfile::tempdir().unwrap();
    let o = mcra(&["spectrum", "--scenario", arg(&scenario("k4.toml")), "--out", arg(dir.path()), "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let rec: SpectrumRecord = toml::from_str(&stdout(&o)).unwrap();
    assert_eq!(rec.bands, 4);
    assert!(rec.feasible);
    assert_eq!(rec.comparison, "6 vs 4");
    assert_eq!(rec.order[0], 1);
    let alloc: AllocationFile =
        toml::from_str(&std::fs::read_to_string(dir.path().join("allocation.toml")).unwrap()).unwrap();
    assert_eq!(alloc.nodes.len(), 4);
    assert_eq!(alloc.links.len(), 12);
    assert!(alloc.nodes.iter().all(|n| n.bands.len() == 2));
}

#[test]
fn optimize_writes_a_descending_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = mcra(&["optimize", "--scenario", arg(&scenario("chain.toml")), "--out", arg(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rec: OptimizeRecord = toml::from_str(&stdout(&o)).unwrap();
    assert!(rec.converged && rec.residuals.worst <= rec.tolerance);
    let trace = parse_trace_csv(&std::fs::read_to_string(dir.path().join("trace.csv")).unwrap()).unwrap();
    assert_eq!(trace.len(), rec.iterations + 1);
    assert!(trace.windows(2).all(|w| w[1].cost <= w[0].cost + 1e-12));
    assert_eq!(trace.last().unwrap().cost, rec.cost);
    let state: StateDump = toml::from_str(&std::fs::read_to_string(dir.path().join("state.toml")).unwrap()).unwrap();
    assert_eq!(state.cost, rec.cost);
    assert_eq!(state.sessions.len(), 2);
}

#[test]
fn identical_runs_are_byte_identical() {
    let runs: Vec<Vec<Vec<u8>>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let o =
                mcra(&["optimize", "--scenario", arg(&scenario("mesh.toml")), "--out", arg(dir.path()), "--seed", "5"]);
            assert_eq!(o.status.code(), Some(0));
            let mut files: Vec<Vec<u8>> = ["trace.csv", "state.toml", "report.toml", "allocation.toml"]
                .iter()
                .map(|f| std::fs::read(dir.path().join(f)).unwrap())
                .collect();
            files.push(o.stdout);
            files
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn budget_exhaustion_exits_one_with_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = mcra(&[
        "optimize",
        "--scenario",
        arg(&scenario("chain.toml")),
        "--out",
        arg(dir.path()),
        "--max-iters",
        "2",
        "--tol",
        "1e-12",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let rec: OptimizeRecord = toml::from_str(&stdout(&o)).unwrap();
    assert!(!rec.converged);
    assert_eq!(rec.iterations, 2);
    assert!(dir.path().join("trace.csv").exists());
}

#[test]
fn check_reports_both_halves() {
    let o = mcra(&["check", "--scenario", arg(&scenario("mesh.toml"))]);
    let rec: CheckRecord = toml::from_str(&stdout(&o)).unwrap();
    assert!(rec.gradient.passed && rec.gradient.states > 0);
    assert_eq!(rec.gradient.block.len(), 5);
    assert_eq!(rec.psd.points, 2500);
    // the logarithmic-capacity cost is not jointly convex
    assert!(!rec.psd.passed && rec.psd.min_eigenvalue < 0.0);
    assert!(!rec.passed);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn oracle_matches_optimize_on_the_toy() {
    let o = mcra(&["oracle", "--scenario", arg(&scenario("toy.toml")), "--restarts", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let rec: OracleRecord = toml::from_str(&stdout(&o)).unwrap();
    assert_eq!(rec.restarts.len(), 3);
    let dir = tempfile::tempdir().unwrap();
    let opt = mcra(&["optimize", "--scenario", arg(&scenario("toy.toml")), "--out", arg(dir.path()), "--tol", "1e-8"]);
    let opt: OptimizeRecord = toml::from_str(&stdout(&opt)).unwrap();
    assert!((opt.cost - rec.best).abs() <= 1e-6 * rec.best);
}

#[test]
fn oracle_rejects_large_instances() {
    let o = mcra(&["oracle", "--scenario", arg(&scenario("mesh.toml")), "--restarts", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o).error.kind, "too-large");
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = mcra(&["check", "--scenario", arg(&dir.path().join("missing.toml"))]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o).error.kind, "read");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[graph]\nedges = [[1, 2]]\n[channel]\nnoise = 0.1\ndefault_gain = 1.0\n").unwrap();
    let o = mcra(&["check", "--scenario", arg(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    let rec = error_record(&o);
    assert_eq!(rec.error.kind, "validation");
    assert!(rec.error.messages[0].contains("no reverse link"));

    std::fs::write(&bad, "[graph]\nedges = [[1, 2], [2, 1]]\n[channel]\nnoise = 0.1\ngain = 3\n").unwrap();
    let o = mcra(&["check", "--scenario", arg(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    let rec = error_record(&o);
    assert_eq!(rec.error.kind, "parse");
    assert!(rec.error.messages[0].contains("line"));

    std::fs::write(
        &bad,
        "[graph]\nedges = [[1, 2], [2, 1]]\n[channel]\nnoise = 0.1\ndefault_gain = 1.0\n[dsa]\nbands = 1\n",
    )
    .unwrap();
    let o = mcra(&["spectrum", "--scenario", arg(&bad), "--out", arg(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let rec = error_record(&o);
    assert_eq!(rec.error.kind, "validation");
    assert!(rec.error.messages[0].contains("below q_min"), "{rec:?}");

    let o = mcra(&["spectrum", "--scenario", arg(&bad)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn infeasible_inline_allocation_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    let text = "[graph]\nedges = [[1, 2], [2, 1]]\n[channel]\nnoise = 0.1\ndefault_gain = 1.0\n\
                [allocation]\nbands = 2\n[[allocation.node]]\nid = 1\nbands = [0, 1]\n[[allocation.node]]\nid = 2\nbands = [0, 1]\n";
    std::fs::write(&path, text).unwrap();
    let o = mcra(&["spectrum", "--scenario", arg(&path), "--out", arg(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o).error.kind, "validation");
}
