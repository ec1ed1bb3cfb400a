use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cuboidcast::data::read_dataset;
use cuboidcast::model::{Model, ModelConfig};
use cuboidcast_tensor::load_checkpoint;
use serde_json::{json, Value};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cuboidcast")).args(args).env("CF_THREADS", "1").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = cli(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    cli(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, n: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    ok(&["gen-data", "--kind", "nbody", "--n", &n.to_string(), "--frames", "4", "--size", "16", "--seed", &seed.to_string(), "--out", p(&out)]);
    out
}

/// A model small enough for 16x16 frames and a few milliseconds per step.
fn tiny_config(dir: &Path, epochs: usize) -> PathBuf {
    let path = dir.join("cfg.json");
    let cfg = json!({
        "model": { "channels": [4, 8], "depth": [1, 1], "heads": 2, "cnn_channels": 4, "norm_groups": 2, "globals": 2 },
        "train": { "epochs": epochs, "batch_size": 4, "micro_batch": 2 }
    });
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (gen(dir.path(), "a.stds", 3, 5), gen(dir.path(), "b.stds", 3, 5), gen(dir.path(), "c.stds", 3, 6));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let d = read_dataset(&a).unwrap();
    assert_eq!((d.len(), d.input_len(), d.target_len(), d.height()), (3, 2, 2, 16));
}

#[test]
fn gen_data_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.stds");
    assert_eq!(code(&["gen-data", "--kind", "nbody", "--n", "2", "--frames", "1", "--out", p(&out)]), 2);
    let physics = dir.path().join("phys.json");
    fs::write(&physics, r#"{"dt": -1.0}"#).unwrap();
    assert_eq!(code(&["gen-data", "--kind", "nbody", "--n", "2", "--physics", p(&physics), "--out", p(&out)]), 2);
    assert_eq!(code(&["gen-data", "--kind", "planets", "--n", "2", "--out", p(&out)]), 2);
    assert_eq!(code(&["--threads", "0", "gen-data", "--kind", "nbody", "--n", "2", "--out", p(&out)]), 2);
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (train, val) = (gen(d, "train.stds", 8, 1), gen(d, "val.stds", 4, 2));
    let cfg = tiny_config(d, 2);
    let run = d.join("run");
    ok(&["train", "--config", p(&cfg), "--data", p(&train), "--val", p(&val), "--out", p(&run)]);
    for f in ["config.json", "history.jsonl", "best.ckpt", "last.ckpt"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let history = fs::read_to_string(run.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);

    let report = d.join("eval.json");
    ok(&["eval", "--ckpt", p(&run.join("best.ckpt")), "--data", p(&val), "--report", p(&report)]);
    let r = json_file(&report);
    for m in ["mse", "mae", "ssim"] {
        assert!(r["report"][m].as_f64().unwrap().is_finite(), "{m}");
    }
    let base = d.join("base.json");
    ok(&["eval", "--baseline", "persistence", "--data", p(&val), "--metrics", "mse,csi", "--report", p(&base)]);
    let b = json_file(&base);
    assert!(b["report"]["mse"].as_f64().unwrap() > 0.0);
    assert!(b["report"]["ssim"].is_null());

    assert_eq!(code(&["eval", "--baseline", "persistence", "--data", p(&val), "--metrics", "psnr"]), 2);
    assert_eq!(code(&["eval", "--baseline", "persistence", "--data", p(&val), "--thresholds", "74,16"]), 2);
    assert_eq!(code(&["eval", "--baseline", "persistence", "--data", p(&d.join("missing.stds"))]), 1);
}

#[test]
fn zero_learning_rate_checkpoint_equals_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (train, val) = (gen(d, "train.stds", 4, 1), gen(d, "val.stds", 4, 2));
    let cfg = tiny_config(d, 1);
    let run = d.join("run");
    ok(&["train", "--config", p(&cfg), "--data", p(&train), "--val", p(&val), "--out", p(&run), "--lr", "0", "--seed", "9"]);
    let (header, tensors) = load_checkpoint(&run.join("last.ckpt")).unwrap();
    let model_cfg: ModelConfig = serde_json::from_value(header.config["run"]["model"].clone()).unwrap();
    let init = Model::build(&model_cfg, 9).unwrap();
    let expected: Vec<_> = init.params.ids().map(|id| init.params.get(id).clone()).collect();
    assert_eq!(tensors, expected);
}

#[test]
fn training_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (train, val) = (gen(d, "train.stds", 8, 1), gen(d, "val.stds", 4, 2));
    let cfg = tiny_config(d, 2);
    let strip = |path: PathBuf| -> Vec<Value> {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_time_s");
                v
            })
            .collect()
    };
    let mut runs = Vec::new();
    for name in ["r1", "r2"] {
        let run = d.join(name);
        ok(&["train", "--config", p(&cfg), "--data", p(&train), "--val", p(&val), "--out", p(&run)]);
        runs.push((fs::read(run.join("best.ckpt")).unwrap(), fs::read(run.join("last.ckpt")).unwrap(), strip(run.join("history.jsonl"))));
    }
    assert!(runs[0] == runs[1], "two identical runs diverged");
}

#[test]
fn flops_reports_and_validates() {
    let text = ok(&["flops", "--pattern", "axial", "--shape", "10x32x32", "--channels", "64"]);
    assert!(text.contains("total"), "{text}");
    let j: Value = serde_json::from_str(&ok(&["flops", "--pattern", "axial", "--shape", "4x8x8", "--channels", "16", "--globals", "2", "--json"])).unwrap();
    assert!(j["cost"].is_object());
    assert_eq!(code(&["flops", "--pattern", "no_such_pattern", "--shape", "4x8x8", "--channels", "16"]), 2);
    assert_eq!(code(&["flops", "--pattern", "axial", "--shape", "4x8", "--channels", "16"]), 2);
    assert_eq!(code(&["flops", "--pattern", "axial", "--shape", "4x8x8", "--channels", "15", "--heads", "4"]), 2);
}

#[test]
fn pattern_search_covers_the_space() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = gen(d, "data.stds", 8, 1);
    let model = d.join("model.json");
    fs::write(&model, json!({ "channels": [4, 8], "depth": [1, 1], "heads": 2, "cnn_channels": 4, "norm_groups": 2 }).to_string()).unwrap();
    let report = d.join("search.json");
    ok(&["pattern-search", "--data", p(&data), "--config", p(&model), "--epochs", "1", "--batch-size", "4", "--val-frac", "0.5", "--report", p(&report)]);
    let rows = json_file(&report)["rows"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 16);
    assert_eq!(rows.iter().filter(|r| r["globals"].as_u64().unwrap() > 0).count(), 8);
    assert!(rows.iter().all(|r| r["mse"].as_f64().unwrap().is_finite()));
}

#[test]
fn chaos_demo_writes_frame_grids() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("chaos");
    let text = ok(&["chaos-demo", "--out", p(&out), "--steps", "5", "--size", "16", "--ensemble", "2"]);
    assert!(text.contains("ratio of means"), "{text}");
    for name in ["nbody.pgm", "free.pgm"] {
        let bytes = fs::read(out.join(name)).unwrap();
        let header = b"P5\n80 32\n255\n";
        assert!(bytes.starts_with(header));
        assert_eq!(bytes.len(), header.len() + 80 * 32);
    }
    let j = json_file(&out.join("divergence.json"));
    assert_eq!(j["ensemble"]["seeds"].as_array().unwrap().len(), 2);
}

#[test]
fn selfcheck_detects_a_corrupted_index_map() {
    let o = cli(&["selfcheck", "--fast", "--corrupt-index-map"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bijection"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(code(&["forecast"]), 2);
}
