use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn chronoseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chronoseg"))
        .current_dir(dir)
        .env_remove("CHRONOSEG_OUT_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap()
}

fn write_config(dir: &Path) {
    fs::write(
        dir.join("exp.toml"),
        "seed = 5\nsteps = 60\noutput_dir = \"out\"\n\n[scenario]\nnoise = 0.0\n\n[optimizer]\nlearning_rate = 0.01\n",
    )
    .unwrap();
}

#[test]
fn staged_pipeline_shares_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_config(d);
    let synth = stdout_json(&chronoseg(
        d,
        &["--config", "exp.toml", "synth", "--out", "data"],
    ));
    let hash = synth["config_hash"].as_str().unwrap().to_string();
    assert!(d.join("data/annotations.jsonl").exists());

    let train = stdout_json(&chronoseg(d, &["--config", "exp.toml", "train"]));
    assert_eq!(train["config_hash"], hash.as_str());
    let curve = fs::read_to_string(d.join("out/loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 61);
    assert!(curve.lines().skip(1).all(|l| l.ends_with(&hash)));

    let infer = stdout_json(&chronoseg(
        d,
        &[
            "--config",
            "exp.toml",
            "infer",
            "--params",
            "out/params.json",
            "--data",
            "data",
        ],
    ));
    assert_eq!(infer["queries"], synth["records"]);

    let eval = chronoseg(
        d,
        &[
            "--config",
            "exp.toml",
            "eval",
            "--predictions",
            "out/predictions.json",
        ],
    );
    assert!(eval.status.success());
    let csv = String::from_utf8(eval.stdout).unwrap();
    assert_eq!(csv, fs::read_to_string(d.join("out/metrics.csv")).unwrap());
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("metric,value,n_queries,config_hash"));
    let rows: Vec<&str> = lines.collect();
    assert!(rows.iter().any(|r| r.starts_with("event_iou,")));
    assert!(rows.iter().all(|r| r.ends_with(&hash)));
}

#[test]
fn report_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_config(d);
    let first = chronoseg(d, &["--config", "exp.toml", "report"]);
    let second = chronoseg(d, &["--config", "exp.toml", "report"]);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout);
    let other = chronoseg(d, &["--config", "exp.toml", "--seed", "6", "report"]);
    assert_ne!(first.stdout, other.stdout);
}

#[test]
fn baseline_and_assemble_on_synthetic_data() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_config(d);
    let synth = stdout_json(&chronoseg(
        d,
        &[
            "--config", "exp.toml", "synth", "--out", "data", "--draws", "2",
        ],
    ));
    assert_eq!(synth["videos"], 2);

    let base = stdout_json(&chronoseg(
        d,
        &[
            "--config",
            "exp.toml",
            "baseline",
            "--data",
            "data",
            "--out",
            "base.json",
        ],
    ));
    assert_eq!(base["queries"], synth["records"]);
    assert!(d.join("base.json").exists());

    stdout_json(&chronoseg(
        d,
        &[
            "assemble",
            "--annotations",
            "data/annotations.jsonl",
            "--out",
            "seq.jsonl",
        ],
    ));
    let text = fs::read_to_string(d.join("seq.jsonl")).unwrap();
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let tokens = v["tokens"].as_array().unwrap();
        assert_eq!(tokens.last().unwrap(), "<eos>");
        assert!(tokens.iter().any(|t| t == "<ent>"));
        assert_eq!(tokens.len(), v["ids"].as_array().unwrap().len());
    }
}

#[test]
fn invalid_annotations_report_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("bad.jsonl"),
        "{\"video_id\":\"v\",\"fps\":1.0,\"num_frames\":10,\"query\":\"q\",\"events\":[[1.0,3.0]],\"captions\":[\"a\"]}\n\
         {\"video_id\":\"v\",\"fps\":1.0,\"num_frames\":10,\"query\":\"q\",\"events\":[[4.0,2.0]]}\n",
    )
    .unwrap();
    let out = chronoseg(d, &["assemble", "--annotations", "bad.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "record");
    assert_eq!(err["error"]["records"][0]["line"], 2);
}

#[test]
fn errors_are_json_records() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();

    let missing = chronoseg(d, &["--config", "missing.toml", "report"]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(stderr_json(&missing)["error"]["kind"], "io");

    fs::write(d.join("bad.toml"), "seed = 1\nsteps = \"many\"\n").unwrap();
    let bad = chronoseg(d, &["--config", "bad.toml", "report"]);
    assert_eq!(stderr_json(&bad)["error"]["kind"], "config");

    let no_data = chronoseg(d, &["baseline"]);
    assert_eq!(stderr_json(&no_data)["error"]["kind"], "config");

    let usage = chronoseg(d, &["frobnicate"]);
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(stderr_json(&usage)["error"]["kind"], "usage");

    let help = chronoseg(d, &["--help"]);
    assert!(help.status.success());
    assert!(String::from_utf8_lossy(&help.stdout).contains("report"));
}

#[test]
fn stage_failures_name_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("blocker"), "").unwrap();
    fs::write(
        d.join("exp.toml"),
        "seed = 1\nsteps = 5\noutput_dir = \"blocker/out\"\n",
    )
    .unwrap();
    let out = chronoseg(d, &["--config", "exp.toml", "report"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "stage");
    assert_eq!(err["error"]["stage"], "write");
}

#[test]
fn out_dir_env_override() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = Command::new(env!("CARGO_BIN_EXE_chronoseg"))
        .current_dir(d)
        .env("CHRONOSEG_OUT_DIR", "elsewhere")
        .args(["--seed", "2", "train"])
        .output()
        .unwrap();
    let v = stdout_json(&out);
    assert_eq!(v["steps"], 500);
    assert!(d.join("elsewhere/params.json").exists());
}

#[test]
fn shipped_config_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let out = Command::new(env!("CARGO_BIN_EXE_chronoseg"))
        .current_dir(tmp.path())
        .env("CHRONOSEG_OUT_DIR", "out")
        .arg("--config")
        .arg(&config)
        .arg("report")
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("baseline_event_iou,")));
    assert!(tmp.path().join("out/metrics.csv").exists());
}
