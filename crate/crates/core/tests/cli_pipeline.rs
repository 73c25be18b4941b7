use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dggen(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dggen"));
    cmd.args(args)
        .env_remove("DGGEN_DATA_DIR")
        .env_remove("DGGEN_OUT_DIR")
        .env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str], envs: &[(&str, &Path)]) {
    let out = dggen(args, envs);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "d_mem = 8\nd_emb = 8\nepochs = 2\nbatch_size = 50\nseed = 5\nnum_interactions = 120\n";

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    fs::write(&cfg, SMALL).unwrap();
    let toy = d.join("toy.csv");
    ok(&["make-toy", "--out", s(&toy), "--n-events", "600"], &[]);
    assert_eq!(fs::read_to_string(&toy).unwrap().lines().count(), 600);

    let split = d.join("split");
    ok(
        &[
            "ingest",
            "--input",
            s(&toy),
            "--out-dir",
            s(&split),
            "--f-train",
            "0.6",
            "--f-val",
            "0.2",
        ],
        &[],
    );
    let rows = |name: &str| fs::read_to_string(split.join(name)).unwrap().lines().count();
    assert_eq!((rows("train.csv"), rows("val.csv"), rows("test.csv")), (360, 120, 120));
    assert!(split.join("train.csv.schema").exists());
    assert_eq!(rows("nodes.txt"), 50);

    let ckpt = d.join("m.dgg");
    let train = split.join("train.csv");
    ok(
        &["train", "--data", s(&train), "--config", s(&cfg), "--out", s(&ckpt)],
        &[],
    );
    let log = fs::read_to_string(d.join("m.dgg.log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,mean_nll,sigma,wall_seconds");
    assert_eq!(lines.len(), 3);

    let synth = d.join("synth.csv");
    ok(
        &[
            "generate",
            "--checkpoint",
            s(&ckpt),
            "--config",
            s(&cfg),
            "--out",
            s(&synth),
        ],
        &[],
    );
    let text = fs::read_to_string(&synth).unwrap();
    assert_eq!(text.lines().count(), 120);
    let mut prev = f64::NEG_INFINITY;
    for line in text.lines() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 6, "{line}");
        assert_ne!(cols[0], cols[1]);
        let t: f64 = cols[2].parse().unwrap();
        assert!(t >= prev);
        prev = t;
    }

    let report = d.join("report.json");
    let plots = d.join("plots");
    ok(
        &[
            "evaluate",
            "--real",
            s(&split.join("test.csv")),
            "--synth",
            s(&synth),
            "--report",
            s(&report),
            "--plots",
            s(&plots),
        ],
        &[],
    );
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["synth_events"], 120);
    let features = r["js"]["features"].as_array().unwrap();
    assert_eq!(features.len(), 2);
    for f in features {
        let js = f["js"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&js));
    }
    assert!(fs::read_dir(&plots).unwrap().count() > 0);

    let lp = d.join("lp.json");
    ok(
        &[
            "linkpred",
            "--checkpoint",
            s(&ckpt),
            "--train",
            s(&train),
            "--val",
            s(&split.join("val.csv")),
            "--test",
            s(&split.join("test.csv")),
            "--report",
            s(&lp),
            "--negatives",
            "random",
        ],
        &[],
    );
    let r: Value = serde_json::from_str(&fs::read_to_string(&lp).unwrap()).unwrap();
    for key in ["average_precision", "auroc"] {
        let v = r[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    assert_eq!(r["positives"].as_u64().unwrap() + r["skipped"].as_u64().unwrap(), 120);
}

#[test]
fn relative_paths_resolve_under_directory_variables() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let envs = [("DGGEN_DATA_DIR", data.path()), ("DGGEN_OUT_DIR", out.path())];
    ok(&["make-toy", "--out", "toy.csv", "--n-events", "200"], &envs);
    assert!(out.path().join("toy.csv").exists());
    fs::copy(out.path().join("toy.csv"), data.path().join("toy.csv")).unwrap();
    fs::copy(out.path().join("toy.csv.schema"), data.path().join("toy.csv.schema")).unwrap();
    ok(&["ingest", "--input", "toy.csv", "--out-dir", "parts"], &envs);
    for name in ["train.csv", "val.csv", "test.csv", "nodes.txt"] {
        assert!(out.path().join("parts").join(name).exists(), "{name}");
    }
    assert!(!data.path().join("parts").exists());
}

#[test]
fn ingest_remaps_string_ids() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let raw = d.join("raw.csv");
    fs::write(
        &raw,
        "alice,bob,1.0,7,0\nbob,carol,2.0,7,1\ncarol,alice,3.0,7,1\nalice,carol,4.0,7,0\n",
    )
    .unwrap();
    ok(
        &[
            "ingest",
            "--input",
            s(&raw),
            "--schema",
            "kind=cat:2",
            "--out-dir",
            s(d),
            "--f-train",
            "0.5",
            "--f-val",
            "0.25",
        ],
        &[],
    );
    assert_eq!(
        fs::read_to_string(d.join("nodes.txt")).unwrap(),
        "0,alice\n1,bob\n2,carol\n"
    );
    assert_eq!(
        fs::read_to_string(d.join("train.csv")).unwrap().lines().next().unwrap(),
        "0,1,1,0,0"
    );
}

#[test]
fn bad_invocations_report_errors() {
    let dir = tempfile::tempdir().unwrap();
    let usage = dggen(&["train"], &[]);
    assert_eq!(usage.status.code(), Some(2));
    let missing = dggen(
        &[
            "generate",
            "--checkpoint",
            s(&dir.path().join("none.dgg")),
            "--out",
            "x.csv",
        ],
        &[],
    );
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("none.dgg"));
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "epoch = 3\n").unwrap();
    let toy = dir.path().join("toy.csv");
    ok(&["make-toy", "--out", s(&toy), "--n-events", "50"], &[]);
    let bad = dggen(
        &[
            "train",
            "--data",
            s(&toy),
            "--config",
            s(&cfg),
            "--out",
            s(&dir.path().join("m.dgg")),
        ],
        &[],
    );
    assert_eq!(bad.status.code(), Some(1));
}
