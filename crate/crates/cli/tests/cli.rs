//! End-to-end runs of the `streamperf` binary on tiny corpora.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_streamperf"));
    c.env("STREAMPERF_LOG", "warn");
    c
}

/// Two scenarios per archetype, 4 s each, small forests.
fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = json!({
        "seed": 5,
        "corpus": {
            "mix": [
                {"archetype": "intersection-stop", "count": 2},
                {"archetype": "highway-cruise", "count": 2},
                {"archetype": "ego-turn", "count": 2},
                {"archetype": "occlusion-corridor", "count": 2},
                {"archetype": "mixed", "count": 2}
            ],
            "duration": 4.0,
            "test_fraction": 0.5
        },
        "hyperparams": {"max_depth": 6, "max_features": 18, "n_estimators": 10, "min_impurity_decrease": 0.0, "seed": 1},
        "analysis": {"k": 3, "restarts": 2, "pareto_steps": 4},
        "output_dir": dir.join("run")
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn run(cfg: &Path, args: &[&str]) -> Output {
    bin().arg("--config").arg(cfg).args(args).output().expect("spawn streamperf")
}

fn ok(cfg: &Path, args: &[&str]) -> String {
    let out = run(cfg, args);
    assert!(
        out.status.success(),
        "streamperf {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(cfg: &Path, args: &[&str]) -> String {
    let out = run(cfg, args);
    assert!(!out.status.success(), "streamperf {args:?} unexpectedly succeeded");
    assert_eq!(out.status.code(), Some(1));
    String::from_utf8(out.stderr).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Relative path -> contents of every file under `root`, except run records.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().unwrap() != "run.json" {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let run_dir = tmp.path().join("run");

    ok(&cfg, &["gen"]);
    let manifest = read_json(&run_dir.join("corpus/manifest.json"));
    let ids: Vec<&str> = manifest["entries"].as_array().unwrap().iter().map(|e| e["id"].as_str().unwrap()).collect();
    assert_eq!(ids.len(), 10);
    for archetype in ["intersection-stop", "highway-cruise", "ego-turn", "occlusion-corridor", "mixed"] {
        for i in 0..2 {
            let id = format!("{archetype}-{i:03}");
            assert!(ids.contains(&id.as_str()), "manifest lacks {id}");
            assert!(run_dir.join("corpus/scenarios").join(format!("{id}.json")).exists());
        }
    }

    let out = ok(&cfg, &["sweep"]);
    assert!(out.contains("18 configurations"), "{out}");
    let ds_manifest = read_json(&run_dir.join("dataset/manifest.json"));
    assert_eq!(ds_manifest["grid"].as_array().unwrap().len(), 18);
    let parts = fs::read_dir(run_dir.join("dataset/parts")).unwrap().count();
    assert_eq!(parts, 10 * 18 + 1, "one part per (scenario, config) plus the key");

    ok(&cfg, &["train"]);
    assert!(run_dir.join("model/policy.json").exists());

    let out = ok(&cfg, &["eval"]);
    assert_eq!(out.lines().count(), 6, "{out}");
    let report = fs::read_to_string(run_dir.join("eval/report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0], "Global best");
    assert_eq!(rows[1], "Optimal");
    for mode in ["gt-current", "gt-previous", "closed-loop"] {
        assert!(run_dir.join(format!("eval/decisions-{mode}.jsonl")).exists());
    }

    ok(&cfg, &["analyze"]);
    let imp = fs::read_to_string(run_dir.join("analysis/importance.csv")).unwrap();
    let total: f64 = imp.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-6, "importances sum to {total}");
    for f in ["score_space.csv", "centroids.csv", "heatmap-optimal.csv", "pareto.csv", "importance_groups.csv"] {
        assert!(run_dir.join("analysis").join(f).exists(), "missing {f}");
    }

    let out = ok(&cfg, &["bench", "--trials", "50"]);
    assert!(out.contains("p99"), "{out}");

    // every output directory records the resolved config and input hashes
    for d in ["corpus", "dataset", "model", "eval", "analysis", "bench"] {
        let rec = read_json(&run_dir.join(d).join("run.json"));
        assert_eq!(rec["config"]["seed"], 5, "{d}");
        assert_eq!(rec["config_sha256"].as_str().unwrap().len(), 64, "{d}");
    }
    let rec = read_json(&run_dir.join("eval/run.json"));
    assert!(rec["inputs"].as_object().unwrap().keys().any(|k| k.ends_with("policy.json")));

    // a model whose feature layout differs is refused
    let model_path = run_dir.join("model/policy.json");
    let mut model = read_json(&model_path);
    model["feature_layout_version"] = json!(99);
    fs::write(&model_path, model.to_string()).unwrap();
    let err = fails(&cfg, &["eval"]);
    assert!(err.contains("layout"), "{err}");
}

#[test]
fn gen_is_deterministic_and_guarded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        ok(&cfg, &["--output", d.to_str().unwrap(), "gen"]);
    }
    assert_eq!(tree(&a.join("corpus")), tree(&b.join("corpus")));

    let err = fails(&cfg, &["--output", a.to_str().unwrap(), "gen"]);
    assert!(err.contains("--force"), "{err}");
    ok(&cfg, &["--output", a.to_str().unwrap(), "--seed", "6", "gen", "--force"]);
    assert_ne!(tree(&a.join("corpus")), tree(&b.join("corpus")));
}

#[test]
fn gen_rejects_empty_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("empty.json");
    let cfg = json!({"corpus": {"mix": []}, "output_dir": tmp.path().join("run")});
    fs::write(&path, cfg.to_string()).unwrap();
    fails(&path, &["gen"]);
    assert!(!tmp.path().join("run/corpus/manifest.json").exists());
}

#[test]
fn sweep_resumes_from_stored_parts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let run_dir = tmp.path().join("run");
    ok(&cfg, &["gen"]);
    ok(&cfg, &["sweep"]);

    // plant a marker in one stored run; a resumed sweep must reuse it
    let part = run_dir.join("dataset/parts/mixed-000__c004.json");
    let mut v = read_json(&part);
    v["records"][0]["smota"] = json!(-1234.5);
    fs::write(&part, v.to_string()).unwrap();
    ok(&cfg, &["sweep"]);
    let records = fs::read_to_string(run_dir.join("dataset/records.jsonl")).unwrap();
    assert!(records.contains("-1234.5"), "resumed sweep recomputed a stored part");

    ok(&cfg, &["sweep", "--force"]);
    let records = fs::read_to_string(run_dir.join("dataset/records.jsonl")).unwrap();
    assert!(!records.contains("-1234.5"), "--force kept a stored part");

    // parts of a different sweep are discarded
    fs::write(&part, v.to_string()).unwrap();
    ok(&cfg, &["--latency-scale", "0.5", "sweep"]);
    let records = fs::read_to_string(run_dir.join("dataset/records.jsonl")).unwrap();
    assert!(!records.contains("-1234.5"), "stale part reused");
}

#[test]
fn absolute_variant_and_mode_selection() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let run_dir = tmp.path().join("run");
    ok(&cfg, &["gen"]);
    ok(&cfg, &["sweep"]);
    ok(&cfg, &["train", "--variant", "absolute"]);
    let model = read_json(&run_dir.join("model/policy.json"));
    assert_eq!(model["options"]["target"], "absolute");
    let out = ok(&cfg, &["eval", "--mode", "closed-loop"]);
    assert_eq!(out.lines().count(), 4, "{out}");
    assert!(run_dir.join("eval/decisions-closed-loop.jsonl").exists());
    assert!(!run_dir.join("eval/decisions-gt-current.jsonl").exists());

    ok(&cfg, &["train", "--variant", "classify-joint"]);
    assert_eq!(read_json(&run_dir.join("model/policy.json"))["policy"], "classifier");
    ok(&cfg, &["eval"]);
}

#[test]
fn usage_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    // commands that need earlier stages
    let err = fails(&cfg, &["sweep"]);
    assert!(err.starts_with("error:"), "{err}");
    fails(&cfg, &["train"]);
    fails(&cfg, &["eval"]);
    // bad flag values are rejected by the parser
    let out = bin().args(["--grid", "huge", "config"]).output().unwrap();
    assert!(!out.status.success());
    let out = bin().args(["--jobs", "0", "config"]).output().unwrap();
    assert!(!out.status.success());
    let out = bin().args(["--latency-scale", "0", "config"]).output().unwrap();
    assert!(!out.status.success());
    // an unknown config key is an error, not silently ignored
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"seeed": 1}"#).unwrap();
    fails(&bad, &["config"]);
}

#[test]
fn config_reflects_flags() {
    let out = bin().args(["--seed", "42", "--grid", "extended", "config"]).output().unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], 42);
    assert_eq!(v["grid"], "extended");
}
