use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deskdiff"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "seed": 5,
        "mixture": { "kind": "ring", "components": 4, "std": 0.2 },
        "sampler": { "kind": "ddim", "steps": 10 },
        "embedder": { "kind": "random_fourier", "seed": 1, "in_dim": 2, "out_dim": 32, "bandwidth": 0.4 },
        "guidance": { "gamma": 0.05, "n_step": 2, "clip_norm": 1.0, "dynamic_growth": true },
        "metrics": { "k": 3, "samples": 12, "held_out": 60 },
        "references": { "source": "mixture", "count": 4 },
        "output_dir": dir.join("run").to_str().unwrap(),
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn sample_writes_every_artifact_and_report_reads_them() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = run(&["sample", cfg.to_str().unwrap(), "--quiet"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let dir = tmp.path().join("run");
    for f in ["samples.csv", "baseline.csv", "refs.csv", "metrics.json", "config.json", "scatter.svg"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let metrics = fs::read_to_string(dir.join("metrics.json")).unwrap();
    assert!(!metrics.contains("NaN") && !metrics.contains("null"));
    let v: serde_json::Value = serde_json::from_str(&metrics).unwrap();
    assert!(v["baseline"]["fid"].is_number() && v["guided"]["vendi"].is_number());

    let refs = fs::read_to_string(dir.join("refs.csv")).unwrap();
    let mut lines = refs.lines();
    assert_eq!(lines.next(), Some("x0,x1,origin"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4 + 12);
    assert!(rows[..4].iter().all(|r| r.ends_with(",original")));
    assert!(rows[4..].iter().all(|r| r.ends_with(",generated")));

    let rep = run(&["report", dir.to_str().unwrap()]);
    assert!(rep.status.success());
    let text = String::from_utf8(rep.stdout).unwrap();
    assert!(text.starts_with("metric"));
    for m in ["fid", "kid", "precision", "recall", "mss", "vendi", "top1>0.6"] {
        assert!(text.lines().any(|l| l.starts_with(m)), "missing row {m}");
    }
}

#[test]
fn rerunning_a_config_reproduces_outputs_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let out = run(&["sample", cfg.to_str().unwrap(), "--quiet", "--out", d.to_str().unwrap()]);
        assert!(out.status.success());
    }
    for f in ["samples.csv", "metrics.json", "refs.csv", "baseline.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    // the saved config reproduces the run as well
    let c = tmp.path().join("c");
    let saved = a.join("config.json");
    let out = run(&["sample", saved.to_str().unwrap(), "--quiet", "--out", c.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(fs::read(a.join("samples.csv")).unwrap(), fs::read(c.join("samples.csv")).unwrap());

    let d = tmp.path().join("d");
    let out = run(&["sample", cfg.to_str().unwrap(), "--quiet", "--seed", "6", "--out", d.to_str().unwrap()]);
    assert!(out.status.success());
    assert_ne!(fs::read(a.join("samples.csv")).unwrap(), fs::read(d.join("samples.csv")).unwrap());
}

#[test]
fn ablation_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = run(&["ablate", cfg.to_str().unwrap(), "--axis", "n_step", "--quiet"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(tmp.path().join("run/ablation.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "axis,value,fid,kid,precision,recall,mss,vendi,top1>0.4,top1>0.5,top1>0.6");
    let values: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values, ["0", "1", "3", "5"]);

    let out = run(&["ablate", cfg.to_str().unwrap(), "--axis", "sampler", "--quiet"]);
    assert!(out.status.success());
    let text = fs::read_to_string(tmp.path().join("run/ablation.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn exit_codes_separate_config_and_io_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    assert_eq!(run(&["sample", missing.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(run(&["report", tmp.path().to_str().unwrap()]).status.code(), Some(3));

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(run(&["sample", bad.to_str().unwrap()]).status.code(), Some(2));

    let cfg = small_config(tmp.path());
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    v["sampler"]["steps"] = 0.into();
    fs::write(&bad, v.to_string()).unwrap();
    let out = run(&["sample", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sampler.steps"));

    v["sampler"]["steps"] = 10.into();
    v["embedder"]["in_dim"] = 3.into();
    fs::write(&bad, v.to_string()).unwrap();
    let out = run(&["sample", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("embedder.in_dim"));

    v["embedder"]["in_dim"] = 2.into();
    v["references"] = serde_json::json!({ "source": "csv", "path": "missing.csv" });
    fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(run(&["sample", bad.to_str().unwrap()]).status.code(), Some(2));

    assert_eq!(run(&["ablate", cfg.to_str().unwrap(), "--axis", "eta"]).status.code(), Some(2));
}

#[test]
fn metrics_subcommand_scores_two_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    let pts: String = (0..10).map(|i| format!("{},{}\n", 1.0 + i as f64 * 0.1, (i * i) as f64 * 0.05 - 1.0)).collect();
    fs::write(&a, format!("x0,x1\n{pts}")).unwrap();
    fs::write(&b, format!("x0,x1\n{pts}")).unwrap();
    let out = run(&["metrics", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["fid"].as_f64().unwrap() < 1e-8);
    assert_eq!(v["precision"].as_f64(), Some(1.0));
    assert_eq!(v["recall"].as_f64(), Some(1.0));
}
