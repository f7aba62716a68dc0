mod common;

use std::path::Path;
use std::process::{Command, Output};

fn uwseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uwseg")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = uwseg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.trim_end();
    assert_eq!(line.lines().count(), 1, "{line}");
    serde_json::from_str(line).unwrap()
}

fn write_gen_config(dir: &Path) -> String {
    let path = dir.join("gen.json");
    std::fs::write(&path, serde_json::to_string(&common::tiny_config()).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn generate_train_eval_distill() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let data_s = data.to_str().unwrap();
    ok(&["generate", "--config", &write_gen_config(d), "--out", data_s, "--seed", "9"]);
    assert!(data.join("manifest.json").exists());

    let run_cfg = d.join("run.json");
    std::fs::write(&run_cfg, r#"{"epochs": 1, "width": 4, "loss_mode": "single:dice"}"#).unwrap();
    let run = d.join("run");
    let stdout = ok(&[
        "train", "--config", run_cfg.to_str().unwrap(), "--data", data_s, "--out", run.to_str().unwrap(),
        "--epochs", "2", "--loss-mode", "uncertainty",
    ]);
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["sigma2"].as_array().unwrap().len(), 4);
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let ckpt = run.join("model.ckpt");
    let csv = d.join("eval.csv");
    let args = ["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data_s, "--split", "val", "--out", csv.to_str().unwrap()];
    ok(&args);
    let first = std::fs::read(&csv).unwrap();
    ok(&args);
    assert_eq!(first, std::fs::read(&csv).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("case_id,dsc,nsd,seconds\n"));
    assert_eq!(text.lines().count(), 5);

    let student = d.join("student");
    ok(&[
        "distill", "--teacher", ckpt.to_str().unwrap(), "--config", run_cfg.to_str().unwrap(), "--data", data_s,
        "--out", student.to_str().unwrap(),
    ]);
    assert!(student.join("model.ckpt").exists());
}

#[test]
fn ablate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    common::tiny_dataset(&d.join("data"), 4);
    let cfg = d.join("cfg.json");
    std::fs::write(
        &cfg,
        format!(r#"{{"data": {:?}, "epochs": 1, "width": 4}}"#, d.join("data").to_str().unwrap()),
    )
    .unwrap();
    let run = |name: &str| {
        let out = d.join(name);
        ok(&["ablate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seeds", "1,2"]);
        std::fs::read(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let text = String::from_utf8(a).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "config,dsc,nsd");
    let names: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(names, ["baseline", "only_sd", "no_sharpmin", "full"]);
}

#[test]
fn generate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_gen_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["generate", "--config", &cfg, "--out", a.to_str().unwrap(), "--seed", "5"]);
    ok(&["generate", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "5"]);
    for entry in walk(&a) {
        let rel = entry.strip_prefix(&a).unwrap();
        assert_eq!(std::fs::read(&entry).unwrap(), std::fs::read(b.join(rel)).unwrap(), "{}", rel.display());
    }
}

fn walk(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn gradcheck_subcommand() {
    let stdout = ok(&["gradcheck", "--instances", "3"]);
    let v: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["checks"], 18);
}

#[test]
fn errors_are_single_json_lines() {
    let v = error_json(&uwseg(&["train", "--data", "/nonexistent/data"]));
    assert_eq!(v["error"], "dataset");

    let v = error_json(&uwseg(&["train", "--loss-mode", "single:focal"]));
    assert_eq!(v["error"], "usage");

    let v = error_json(&uwseg(&["eval", "--checkpoint", "/nonexistent.ckpt", "--data", ".", "--out", "x.csv"]));
    assert_eq!(v["error"], "io");

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"epochs": 1, "learning_rate": 0.1}"#).unwrap();
    let v = error_json(&uwseg(&["train", "--config", cfg.to_str().unwrap()]));
    assert_eq!(v["error"], "json");
    assert!(v["message"].as_str().unwrap().contains("learning_rate"));

    let v = error_json(&uwseg(&["frobnicate"]));
    assert_eq!(v["error"], "usage");
}
