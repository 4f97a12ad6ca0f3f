use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn contestnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contestnn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = contestnn(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

fn read_json(path: impl AsRef<Path>) -> Value {
    let path = path.as_ref();
    serde_json::from_str(&std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sample() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/sample.csv")
}

#[test]
fn synth_writes_a_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("synth");
    ok(&[
        "synth",
        "--nodes",
        "10",
        "--edge-mult",
        "1",
        "--sample-mult",
        "50",
        "--seed",
        "4",
        "--out",
        s(&out),
    ]);
    let mut reader = csv::Reader::from_path(out.join("data.csv")).unwrap();
    assert_eq!(reader.headers().unwrap().len(), 10);
    assert_eq!(&reader.headers().unwrap()[0], "Y");
    assert_eq!(reader.records().count(), 500);
    let graph = read_json(out.join("true_graph.json"));
    assert_eq!(graph["edges"].as_array().unwrap().len(), 10);
    assert_eq!(read_json(out.join("spec.json"))["seed"], 4);
    let manifest = read_json(out.join("manifest.json"));
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 4);

    let again = dir.path().join("again");
    ok(&[
        "synth",
        "--nodes",
        "10",
        "--edge-mult",
        "1",
        "--sample-mult",
        "50",
        "--seed",
        "4",
        "--out",
        s(&again),
    ]);
    assert_eq!(
        std::fs::read(out.join("data.csv")).unwrap(),
        std::fs::read(again.join("data.csv")).unwrap()
    );
}

#[test]
fn synth_appends_noise_columns() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "synth",
        "--nodes",
        "10",
        "--edge-mult",
        "2",
        "--sample-mult",
        "10",
        "--noise-fraction",
        "0.2",
        "--seed",
        "1",
        "--out",
        s(dir.path()),
    ]);
    let mut reader = csv::Reader::from_path(dir.path().join("data.csv")).unwrap();
    assert_eq!(reader.headers().unwrap().len(), 12);
    assert_eq!(read_json(dir.path().join("true_graph.json"))["edges"].as_array().unwrap().len(), 20);
}

#[test]
fn injecting_the_complete_graph_matches_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample();
    let common = ["--data", s(&data), "--seed", "11", "--max-steps", "60"];
    let train = dir.path().join("train");
    let inject = dir.path().join("inject");
    ok(&[&["train"], &common[..], &["--out", s(&train)]].concat());
    ok(&[&["inject"], &common[..], &["--graph", "complete", "--out", s(&inject)]].concat());
    assert_eq!(
        std::fs::read(train.join("checkpoint.json")).unwrap(),
        std::fs::read(inject.join("checkpoint.json")).unwrap()
    );
    for file in ["trace.jsonl", "graph.json", "manifest.json"] {
        assert!(train.join(file).is_file(), "{file}");
    }
    let manifest = read_json(train.join("manifest.json"));
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["train"]["max_steps"], 60);
    assert_eq!(manifest["data"]["rows"], 500);
}

#[test]
fn injected_graph_masks_the_network() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample();
    let graph = dir.path().join("known.json");
    std::fs::write(&graph, r#"{"nodes":["Y","X1","X2","X3","X4"],"edges":[[1,0],[2,0]],"kind":"full"}"#).unwrap();
    let out = dir.path().join("inject");
    ok(&[
        "inject",
        "--data",
        s(&data),
        "--graph",
        s(&graph),
        "--max-steps",
        "40",
        "--patience",
        "5",
        "--seed",
        "2",
        "--out",
        s(&out),
    ]);
    let g = read_json(out.join("graph.json"));
    let adjacency = g["adjacency"].as_array().unwrap();
    for i in 0..5 {
        for k in 0..5 {
            let allowed = (i, k) == (1, 0) || (i, k) == (2, 0);
            if !allowed {
                assert_eq!(adjacency[i][k].as_f64().unwrap(), 0.0, "w[{i}][{k}]");
            }
        }
    }
    assert_eq!(
        read_json(out.join("manifest.json"))["extra"]["injected_graph"]["edges"],
        serde_json::json!([[1, 0], [2, 0]])
    );
}

#[test]
fn sample_pipeline_train_extract_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample();
    let train = dir.path().join("train");
    ok(&["train", "--data", s(&data), "--max-steps", "200", "--seed", "3", "--out", s(&train)]);
    let ckpt = train.join("checkpoint.json");

    let low = dir.path().join("low");
    let high = dir.path().join("high");
    ok(&["extract", "--checkpoint", s(&ckpt), "--tau", "0", "--out", s(&low)]);
    ok(&["extract", "--checkpoint", s(&ckpt), "--tau", "0.05", "--out", s(&high)]);
    let edges = |p: &Path| read_json(p.join("graph.json"))["edges"].as_array().unwrap().len();
    assert!(edges(&high) <= edges(&low));
    assert_eq!(
        read_json(low.join("graph.json"))["adjacency"],
        read_json(train.join("graph.json"))["adjacency"]
    );

    let eval = dir.path().join("eval");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&eval)]);
    let e = read_json(eval.join("eval.json"));
    assert_eq!(e["metric"], "mse");
    assert_eq!(e["rows"], 500);
    assert!(e["value"].as_f64().unwrap() < 1.0);
}

#[test]
fn sweep_reports_every_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample();
    let out = dir.path().join("sweep");
    ok(&[
        "sweep",
        "--data",
        s(&data),
        "--grid",
        "0.001,0.01,0.1",
        "--folds",
        "2",
        "--max-steps",
        "30",
        "--patience",
        "5",
        "--seed",
        "5",
        "--out",
        s(&out),
    ]);
    let report = read_json(out.join("sweep.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert_eq!(row["edges_per_fold"].as_array().unwrap().len(), 2);
        assert_eq!(row["metric"]["values"].as_array().unwrap().len(), 2);
    }
    let selected = report["selected"].as_u64().unwrap() as usize;
    assert_eq!(report["selected_tau"], rows[selected]["tau"]);
    assert_eq!(read_json(out.join("selected_graph.json")), report["selected_graph"]);
}

#[test]
fn grid_writes_one_row_per_scenario_and_metric() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid");
    ok(&[
        "grid",
        "--nodes",
        "4",
        "--edge-mult",
        "1",
        "--sample-mult",
        "20",
        "--inject",
        "0.2,0.5",
        "--repeats",
        "2",
        "--max-steps",
        "20",
        "--patience",
        "5",
        "--out",
        s(&out),
    ]);
    let mut reader = csv::Reader::from_path(out.join("report.csv")).unwrap();
    let headers: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        headers,
        ["scenario", "|V|", "e", "s", "fraction-injected", "seed", "metric-name", "value"]
    );
    let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    // repeats · (baseline + two fractions) · two metrics
    assert_eq!(records.len(), 2 * 3 * 2);
    assert_eq!(records.iter().filter(|r| &r[0] == "castle+").count(), 4);

    let eval = dir.path().join("eval");
    ok(&["eval", "--report", s(&out.join("report.csv")), "--out", s(&eval)]);
    assert_eq!(read_json(eval.join("summary.json")), read_json(out.join("summary.json")));
}

#[test]
fn contest_replays_a_script() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample();
    let train = dir.path().join("train");
    ok(&["train", "--data", s(&data), "--max-steps", "100", "--seed", "6", "--out", s(&train)]);
    let edges = read_json(train.join("graph.json"))["edges"].clone();
    let first = edges[0].clone();
    let script = dir.path().join("script.json");
    std::fs::write(
        &script,
        serde_json::json!([
            { "kind": "set-tau", "tau": 0.0 },
            { "kind": "cut-edges", "removed_edges": [first] },
            { "kind": "accept" },
        ])
        .to_string(),
    )
    .unwrap();
    let out = dir.path().join("contest");
    ok(&[
        "contest",
        "--data",
        s(&data),
        "--checkpoint",
        s(&train.join("checkpoint.json")),
        "--revisions",
        s(&script),
        "--max-steps",
        "50",
        "--patience",
        "5",
        "--out",
        s(&out),
    ]);
    let history = read_json(out.join("history.json"));
    let history = history.as_array().unwrap();
    assert_eq!(history.len(), 4);
    assert_eq!(history[2]["retrained"], true);
    let graph = read_json(out.join("graph.json"));
    assert!(!graph["edges"].as_array().unwrap().contains(&first));
    assert!(out.join("checkpoint.json").is_file());
    assert_eq!(read_json(out.join("manifest.json"))["extra"]["status"], "accepted");

    let short = dir.path().join("short.json");
    std::fs::write(&short, r#"[{"kind":"set-tau","tau":0.1}]"#).unwrap();
    let aborted = dir.path().join("aborted");
    let res = contestnn(&[
        "contest",
        "--data",
        s(&data),
        "--checkpoint",
        s(&train.join("checkpoint.json")),
        "--revisions",
        s(&short),
        "--out",
        s(&aborted),
    ]);
    assert!(!res.status.success());
    assert!(!aborted.join("checkpoint.json").exists());
    assert_eq!(read_json(aborted.join("manifest.json"))["extra"]["status"], "aborted");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample();
    assert_eq!(contestnn(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        contestnn(&["train", "--data", s(&data), "--max-steps", "0", "--out", s(dir.path())])
            .status
            .code(),
        Some(1)
    );
    let missing = contestnn(&["train", "--data", s(&data), "--target", "Z", "--out", s(dir.path())]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains('Z'));
    let absent = dir.path().join("absent.csv");
    assert_eq!(
        contestnn(&["train", "--data", s(&absent), "--out", s(dir.path())]).status.code(),
        Some(2)
    );
    assert_eq!(contestnn(&["--help"]).status.code(), Some(0));
}
