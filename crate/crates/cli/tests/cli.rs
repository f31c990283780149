use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_softrules"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    let bench = data("mini_dev.jsonl");
    let bench = bench.to_str().unwrap();
    assert_eq!(run(&["eval", "--episodes", bench, "--mode", "hard", "--override", "nonsense"]).status.code(), Some(1));
    assert_eq!(run(&["eval", "--episodes", bench, "--mode", "hard", "--t", "1.5"]).status.code(), Some(1));
    assert_eq!(run(&["eval", "--episodes", bench, "--mode", "soft"]).status.code(), Some(1));
    assert_eq!(run(&["tune", "--dev", bench, "--step", "0"]).status.code(), Some(1));
}

#[test]
fn validate_reports_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    let good = std::fs::read_to_string(data("samples.jsonl")).unwrap();
    let first = good.lines().next().unwrap();
    std::fs::write(&bad, format!("{first}\n{{\"id\": \"x\", \"tokens\": [\n")).unwrap();
    let out = run(&["validate", "--corpus", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");

    let out = run(&["validate", "--corpus", data("samples.jsonl").to_str().unwrap()]);
    let v = stdout_json(&out);
    assert_eq!(v["kind"], "instances");
    assert_eq!(v["records"], 3);
}

#[test]
fn gen_rules_then_match() {
    let dir = tempfile::tempdir().unwrap();
    let rules = dir.path().join("rules.tsv");
    let figs = data("samples.jsonl");
    let out = run(&["gen-rules", "--instances", figs.to_str().unwrap(), "--kind", "syntactic", "-o", rules.to_str().unwrap()]);
    assert_eq!(stdout_json(&out)["rules"], 3);
    let tsv = std::fs::read_to_string(&rules).unwrap();
    assert!(tsv.contains("org:founder\t[ne=per]+ <nsubj founded >dobj [ne=org]+\tsample-1"), "{tsv}");

    let out = run(&["match", "--rules", rules.to_str().unwrap(), "--corpus", figs.to_str().unwrap()]);
    assert!(out.status.success());
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    // every rule matches at least its own instance
    for id in ["sample-1", "sample-2", "sample-3"] {
        assert!(lines.iter().any(|l| l["instance_id"] == id && l["matched"] == true), "{id}");
    }
    assert!(lines.iter().all(|l| l["binding"].is_object()));

    let bare = dir.path().join("bare.txt");
    std::fs::write(&bare, "[ne=per]+ <nsubj founded >dobj [ne=org]+\n").unwrap();
    let out = run(&["match", "--rules", bare.to_str().unwrap(), "--corpus", figs.to_str().unwrap(), "--all"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3);
    let matched: Vec<&str> = rows.iter().filter(|r| r["matched"] == true).map(|r| r["instance_id"].as_str().unwrap()).collect();
    assert_eq!(matched, ["sample-1"]);
}

#[test]
fn build_data_is_deterministic_under_seed() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    stdout_json(&run(&["--seed", "5", "gen-corpus", "--sentences", "300", "-o", corpus.to_str().unwrap()]));
    let build = |name: &str, extra: &[&str]| {
        let out_path = dir.path().join(name);
        let mut args = vec!["build-data", "--seed", "11", "--corpus", corpus.to_str().unwrap(), "-o", out_path.to_str().unwrap()];
        args.extend_from_slice(extra);
        (stdout_json(&run(&args)), std::fs::read(&out_path).unwrap())
    };
    let (a, bytes_a) = build("a.jsonl", &[]);
    let (b, bytes_b) = build("b.jsonl", &[]);
    assert_eq!(a, b);
    assert_eq!(bytes_a, bytes_b);
    assert_eq!(a["sentences"], 300);
    assert!(a["output"].as_u64().unwrap() > 0);

    let (plain, _) = build("c.jsonl", &["--no-paraphrase", "--no-augment"]);
    assert_eq!(plain["augmented"], 0);
    assert!(plain["output"].as_u64().unwrap() < a["output"].as_u64().unwrap());
    for line in String::from_utf8(bytes_a).unwrap().lines().take(20) {
        let v: Value = serde_json::from_str(line).unwrap();
        for field in ["rule", "sentence", "origin", "type_pair"] {
            assert!(v.get(field).is_some(), "{field} missing in {line}");
        }
    }
}

#[test]
fn train_score_eval_tune() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let pairs = dir.path().join("pairs.jsonl");
    let model = dir.path().join("model.json");
    let config = dir.path().join("train.json");
    stdout_json(&run(&["gen-corpus", "--sentences", "400", "-o", corpus.to_str().unwrap()]));
    stdout_json(&run(&["build-data", "--corpus", corpus.to_str().unwrap(), "-o", pairs.to_str().unwrap()]));
    std::fs::write(&config, r#"{"batch_size": 32, "epochs": 2, "lr_rule": 6.0, "lr_sentence": 6.0, "lr_projection": 0.25, "lr_logit_scale": 0.01, "encoder": {"hash_dim": 65536, "d_in": 64, "d_out": 64}}"#).unwrap();
    let summary = stdout_json(&run(&[
        "train",
        "--seed",
        "3",
        "--data",
        pairs.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "-o",
        model.to_str().unwrap(),
    ]));
    assert!(summary["steps"].as_u64().unwrap() > 0);
    assert!(summary["loss_last"].as_f64().unwrap().is_finite());

    let score = |rule: &str| {
        stdout_json(&run(&[
            "score",
            "--model",
            model.to_str().unwrap(),
            "--rule",
            rule,
            "--sentence",
            "# * per * Bill Gates # founded # * org * Microsoft #",
        ]))["similarity"]
            .as_f64()
            .unwrap()
    };
    let s = score("[ne=per]+ <nsubj founded >dobj [ne=org]+");
    assert!((-1.0..=1.0).contains(&s));
    assert_eq!(s, score("[ne=per]+   <nsubj founded >dobj [ne=org]+"));
    assert_eq!(run(&["score", "--model", model.to_str().unwrap(), "--rule", "[ne=per]+ <nsubj", "--sentence", "x"]).status.code(), Some(1));

    let bench = data("mini_dev.jsonl");
    let report = dir.path().join("report.json");
    let v = stdout_json(&run(&[
        "eval",
        "--episodes",
        bench.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--mode",
        "hybrid",
        "--t",
        "0.6",
        "--override",
        "per:spouse=0.7",
        "--report",
        report.to_str().unwrap(),
    ]));
    assert_eq!(v["mode"], "hybrid");
    assert_eq!(v["episodes"], 100);
    assert_eq!(v["overrides"]["per:spouse"], 0.7);
    assert!(v.get("predictions").is_none());
    let full: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(full["predictions"].as_array().unwrap().len(), 100);

    let tuned = stdout_json(&run(&["tune", "--dev", bench.to_str().unwrap(), "--model", model.to_str().unwrap(), "--step", "0.05"]));
    let t = tuned["threshold"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&t));
}

#[test]
fn hard_and_baseline_eval_need_no_model() {
    let bench = data("mini_benchmark.jsonl");
    let hard = stdout_json(&run(&["eval", "--episodes", bench.to_str().unwrap(), "--mode", "hard"]));
    assert_eq!(hard["episodes"], 200);
    assert!(hard["metrics"]["precision"].as_f64().unwrap() >= 0.8);
    let base = stdout_json(&run(&["eval", "--episodes", bench.to_str().unwrap(), "--mode", "baseline"]));
    assert!(base["metrics"]["recall"].as_f64().unwrap() > hard["metrics"]["recall"].as_f64().unwrap());
}

#[test]
fn serve_binds_and_answers() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = bin()
        .args(["serve", "--port", "0", "--episodes", data("mini_dev.jsonl").to_str().unwrap(), "--sessions"])
        .arg(dir.path())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut first).unwrap();
    let v: Value = serde_json::from_str(&first).unwrap();
    let addr = v["address"].as_str().unwrap().trim_start_matches("http://").to_string();

    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /relations HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    let _ = child.wait();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("org:founded_by"));
}
