use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &[&str] = &[
    "--set", "train_docs=8", "--set", "dev_docs=4", "--set", "distant_docs=8",
    "--set", "dim=8", "--set", "layers=1", "--set", "heads=2", "--set", "ff_dim=16",
    "--set", "groups=2", "--set", "average_last_k=1", "--set", "epochs=2",
];

fn evire(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evire"))
        .args(args)
        .args(TINY)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = evire(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn full_chain(dir: &Path) {
    for cmd in ["gen-data", "train-teacher", "distill", "train-student", "finetune", "predict", "fuse", "eval"] {
        ok(dir, &[cmd, "--seed", "3"]);
    }
}

#[test]
fn full_chain_writes_artifacts_and_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    full_chain(a.path());
    full_chain(b.path());
    for name in [
        "rel_schema.txt",
        "train.json",
        "dev.json",
        "distant.json",
        "teacher.json",
        "silver.bin",
        "student_distant.json",
        "student.json",
        "predictions.json",
        "fusion.json",
        "fused_predictions.json",
        "report.json",
    ] {
        let (pa, pb) = (a.path().join(name), b.path().join(name));
        assert!(pa.exists(), "{name} missing");
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap(), "{name} differs");
        let manifest = pa.with_extension("manifest.json");
        let m = json(&manifest);
        assert_eq!(m["seed"], 3, "{name}");
        assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    }
    let teacher = json(&a.path().join("teacher.manifest.json"));
    assert_eq!(teacher["stage"], "train-teacher");
    assert!(teacher["inputs"]["train.json"].is_string());
    assert!(a.path().join("teacher.log.json").exists());
    let report = json(&a.path().join("report.json"));
    for metric in ["re", "ign", "evi"] {
        let f1 = report[metric]["f1"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f1), "{metric}");
    }
    let fusion = json(&a.path().join("fusion.json"));
    assert!(fusion["fusion"]["tau"].is_number() || fusion["fusion"]["tau"].is_string());

    let text = ok(a.path(), &["inspect-attn", "--seed", "3", "--set", "head=0", "--set", "tail=1"]);
    assert!(text.contains("## sentences") && text.contains("## tokens"));
}

#[test]
fn gold_predictions_score_one() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-data"]);
    let dev = json(&dir.path().join("dev.json"));
    let preds: Vec<Value> = dev
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|d| {
            d["labels"].as_array().unwrap().iter().map(move |l| {
                serde_json::json!({
                    "title": d["title"], "h_idx": l["h"], "t_idx": l["t"], "r": l["r"],
                    "score": 1.0, "evidence": l["evidence"],
                })
            })
        })
        .collect();
    assert!(!preds.is_empty());
    std::fs::write(dir.path().join("predictions.json"), serde_json::to_string(&preds).unwrap()).unwrap();
    let table = ok(dir.path(), &["eval"]);
    assert!(table.contains("RE"));
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["re"]["f1"], 1.0);
    assert_eq!(report["evi"]["f1"], 1.0);
}

#[test]
fn schema_mismatch_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-data"]);
    std::fs::write(dir.path().join("predictions.json"), "[]").unwrap();
    let mut m = serde_json::json!({
        "stage": "predict", "config": {}, "config_hash": "0", "seed": 0,
        "schema_hash": "f".repeat(64), "inputs": {}, "outputs": {},
    });
    std::fs::write(dir.path().join("predictions.manifest.json"), m.to_string()).unwrap();
    let out = evire(dir.path(), &["eval"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));

    let schema = std::fs::read(dir.path().join("rel_schema.txt")).unwrap();
    m["schema_hash"] = Value::String(schema_hash(&schema));
    std::fs::write(dir.path().join("predictions.manifest.json"), m.to_string()).unwrap();
    ok(dir.path(), &["eval"]);
}

fn schema_hash(bytes: &[u8]) -> String {
    let text = std::str::from_utf8(bytes).unwrap();
    evire::corpus::RelationSchema::from_text(text).unwrap().hash()
}

#[test]
fn unknown_keys_and_bad_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = evire(dir.path(), &["keys", "--set", "bogus=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "lamda = 0.2\n").unwrap();
    let out = evire(dir.path(), &["keys", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));

    let out = evire(dir.path(), &["train-teacher", "--set", "lambda=-1"]);
    assert!(!out.status.success());
}

#[test]
fn named_flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# seeds\nseed = 5\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    ok(dir.path(), &["gen-data", "--config", cfg]);
    assert_eq!(json(&dir.path().join("train.manifest.json"))["seed"], 5);
    let first = std::fs::read(dir.path().join("train.json")).unwrap();
    ok(dir.path(), &["gen-data", "--config", cfg, "--seed", "6"]);
    assert_eq!(json(&dir.path().join("train.manifest.json"))["seed"], 6);
    assert_ne!(std::fs::read(dir.path().join("train.json")).unwrap(), first);
}

#[test]
fn keys_lists_every_option() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["keys"]);
    for key in ["seed", "lambda", "er_supervision", "evi_threshold", "precision"] {
        assert!(text.lines().any(|l| l.starts_with(key)), "{key}");
    }
}
