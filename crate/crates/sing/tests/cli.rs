use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sing::io::{read_graph, read_samples, write_graph, write_samples};
use sing_core::{SampleMatrix, UndirectedGraph};

fn sing(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sing")).args(args).env("SING_THREADS", "1").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_butterfly() {
    let dir = tempfile::tempdir().unwrap();
    let o = sing(&["generate", "--family", "butterfly", "--pairs", "5", "--n", "2000", "--seed", "7", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{o:?}");
    let x = read_samples(&dir.path().join("samples.csv")).unwrap();
    assert_eq!((x.n(), x.d()), (2000, 10));
    let truth = read_graph(&dir.path().join("truth.json")).unwrap();
    assert_eq!(truth.num_edges(), 5);
    assert!(dir.path().join("spec.json").exists());
}

#[test]
fn generate_lorenz_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = sing(&["generate", "--family", "lorenz96", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{o:?}");
    let x = read_samples(&dir.path().join("samples.csv")).unwrap();
    assert_eq!((x.n(), x.d()), (3000, 15));
}

#[test]
fn generate_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = sing(&["generate", "--family", "nonparanormal-cdf", "--d", "6", "--n", "50", "--seed", "3", "--out", p(d.path())]);
        assert_eq!(code(&o), 0);
    }
    for f in ["samples.csv", "truth.json", "spec.json", "precision.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn gaussian_chain_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let o = sing(&["generate", "--family", "gaussian", "--d", "3", "--chain", "--n", "5000", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{o:?}");
    let out = dir.path().join("fit");
    let o = sing(&["sing", p(&dir.path().join("samples.csv")), "--beta", "1", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert_eq!(read_graph(&out.join("graph.json")).unwrap(), UndirectedGraph::chain(3));
    assert_eq!(fs::read_to_string(out.join("adjacency.csv")).unwrap(), "0,1,0\n1,0,1\n0,1,0\n");
    assert!(out.join("report.json").exists());
    assert!(out.join("scores/omega_iter1.csv").exists());
    assert!(out.join("scores/variance_iter1.csv").exists());
    assert!(out.join("scores/tau_iter1.csv").exists());

    let o = sing(&["eval", "--truth", p(&dir.path().join("truth.json")), "--estimate", p(&out.join("graph.json"))]);
    assert_eq!(stdout(&o), "type1,type2\n0,0\n");
}

#[test]
fn eval_examples() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);
    let butterfly = UndirectedGraph::from_edges(10, (0..5).map(|k| (2 * k, 2 * k + 1))).unwrap();
    write_graph(&path("b.json"), &butterfly).unwrap();
    write_graph(&path("e.json"), &UndirectedGraph::empty(10)).unwrap();
    write_graph(&path("chain.json"), &UndirectedGraph::chain(3)).unwrap();
    write_graph(&path("tri.json"), &UndirectedGraph::complete(3)).unwrap();

    let run = |t: &str, e: &str| sing(&["eval", "--truth", p(&path(t)), "--estimate", p(&path(e))]);
    assert_eq!(stdout(&run("b.json", "b.json")), "type1,type2\n0,0\n");
    assert_eq!(stdout(&run("b.json", "e.json")), "type1,type2\n0,5\n");
    assert_eq!(stdout(&run("chain.json", "tri.json")), "type1,type2\n1,0\n");
    assert_eq!(code(&run("chain.json", "b.json")), 1);

    let o = sing(&["eval", "--truth", p(&path("chain.json")), "--estimate", p(&path("tri.json")), "--out", p(&path("r.json"))]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path("r.json")).unwrap()).unwrap();
    assert_eq!(v, serde_json::json!({"type1": 1, "type2": 0}));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&sing(&["--help"])), 0);
    assert_eq!(code(&sing(&["generate", "--family", "nope"])), 1);
    assert_eq!(code(&sing(&["sing", "/definitely/not/here.csv"])), 1);
    assert_eq!(code(&sing(&["sing", "x.csv", "--beta", "0"])), 1);

    let ragged = dir.path().join("ragged.csv");
    fs::write(&ragged, "1,2\n3\n").unwrap();
    let o = sing(&["sing", p(&ragged)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("ragged.csv:2"));

    // A constant column cannot be standardized.
    let constant = dir.path().join("constant.csv");
    let rows: Vec<[f64; 2]> = (0..20).map(|l| [1.0, l as f64]).collect();
    write_samples(&constant, &SampleMatrix::from_rows(&rows).unwrap()).unwrap();
    let o = sing(&["sing", p(&constant), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2, "{o:?}");
}

#[test]
fn single_trial_matches_sing_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    fs::write(
        &cfg,
        r#"{"dataset": {"family": "nonparanormal-cdf", "d": 5}, "n": [400], "trials": 1, "seed": 11}"#,
    )
    .unwrap();
    let trials_out = dir.path().join("trials");
    let o = sing(&["trials", p(&cfg), "--out", p(&trials_out)]);
    assert_eq!(code(&o), 0, "{o:?}");

    let gen = dir.path().join("gen");
    let o = sing(&[
        "generate", "--family", "nonparanormal-cdf", "--d", "5", "--n", "400", "--seed", "11", "--out", p(&gen),
    ]);
    assert_eq!(code(&o), 0);
    let fit = dir.path().join("fit");
    assert_eq!(code(&sing(&["sing", p(&gen.join("samples.csv")), "--out", p(&fit)])), 0);
    let o = sing(&["eval", "--truth", p(&gen.join("truth.json")), "--estimate", p(&fit.join("graph.json"))]);
    let counts = stdout(&o).lines().nth(1).unwrap().to_owned();
    let (t1, t2) = counts.split_once(',').unwrap();

    let summary = fs::read_to_string(trials_out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), "n,mean_type1,ci_type1,mean_type2,ci_type2");
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "400");
    assert_eq!(row[1].parse::<f64>().unwrap(), t1.parse::<f64>().unwrap());
    assert_eq!(row[3].parse::<f64>().unwrap(), t2.parse::<f64>().unwrap());
    assert_eq!((row[2], row[4]), ("", ""));
    assert_eq!(fs::read(trials_out.join("truth.json")).unwrap(), fs::read(gen.join("truth.json")).unwrap());
}

#[test]
fn trials_are_deterministic_and_self_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    fs::write(&cfg, r#"{"dataset": {"family": "gaussian", "d": 4, "coupling": 0.3}, "n": [200, 400], "trials": 3}"#)
        .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&sing(&["trials", p(&cfg), "--out", p(&a)])), 0);
    assert_eq!(code(&sing(&["--threads", "2", "trials", p(&cfg), "--out", p(&b)])), 0);
    for f in ["summary.json", "summary.csv", "trials.csv", "truth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["interval"], "student-t");
    for row in summary["rows"].as_array().unwrap() {
        let n = row["n"].as_u64().unwrap();
        let t1: Vec<f64> = summary["records"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|r| r["n"].as_u64() == Some(n))
            .map(|r| r["type1"].as_f64().unwrap())
            .collect();
        assert_eq!(t1.len(), 3);
        assert_eq!(row["mean_type1"].as_f64().unwrap(), t1.iter().sum::<f64>() / 3.0);
    }
}

#[test]
fn trials_reject_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    fs::write(&cfg, r#"{"dataset": {"family": "cubic"}, "n": [100], "trials": 0}"#).unwrap();
    assert_eq!(code(&sing(&["trials", p(&cfg)])), 1);
    fs::write(&cfg, r#"{"dataset": {"family": "cubic"}, "n": [100], "trials": 1, "typo": true}"#).unwrap();
    assert_eq!(code(&sing(&["trials", p(&cfg)])), 1);
}
