use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use wormhole_cli::MNIST_ENV;

fn wormhole(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wormhole")).args(args).env_remove(MNIST_ENV).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_cfg(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.cfg");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_outputs_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "task = avg\nepochs = 12\neval_every = 4\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = wormhole(&["run", "--config", &cfg, "--set", "seed=9", "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("final metric"));
    }
    let curves = fs::read_to_string(a.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 13);
    assert_eq!(curves.lines().next().unwrap(), "epoch,train_loss,eval_loss,eval_error,c_mean,c_min,c_max");
    for f in ["run.json", "curves.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(json["result"]["seed"], 9);
    assert_eq!(json["result"]["complete"], true);
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = write_cfg(dir.path(), "task = avg\nfoo = 1\n");
    let o = wormhole(&["run", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("foo"), "{err}");

    let cfg = write_cfg(dir.path(), "task = avg\n");
    assert_eq!(code(&wormhole(&["run", "--config", &cfg, "--set", "epochs=zero", "--out", s(&out)])), 1);
    assert_eq!(code(&wormhole(&["run", "--config", &cfg, "--set", "epochs", "--out", s(&out)])), 1);
    assert_eq!(code(&wormhole(&["run", "--out", s(&out)])), 1);
    assert_eq!(code(&wormhole(&["table", "--task", "chess", "--seeds", "1", "--out", s(&out)])), 1);
}

#[test]
fn missing_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let missing = dir.path().join("nope.cfg");
    assert_eq!(code(&wormhole(&["run", "--config", s(&missing), "--out", s(&out)])), 2);

    let cfg = write_cfg(dir.path(), "task = mnist\nepochs = 1\n");
    let o = Command::new(env!("CARGO_BIN_EXE_wormhole"))
        .args(["run", "--config", &cfg, "--out", s(&out)])
        .env(MNIST_ENV, dir.path().join("no-such-dir"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn divergence_exits_3_with_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("div");
    let cfg = write_cfg(dir.path(), "task = wavelet\nepochs = 20\n");
    let o = wormhole(&["run", "--config", &cfg, "--set", "inner.alpha=100", "--set", "wormhole.kind=vanilla", "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(json["result"]["complete"], false);
    assert!(json["result"]["failure"]["reason"].as_str().unwrap().contains("query loss"));
    assert!(out.join("curves.csv").exists());
}

#[test]
fn wavelet_table_marks_per_weight_absent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o = wormhole(&[
        "table", "--task", "wavelet", "--seeds", "2", "--out", s(&out), "--set", "epochs=3", "--set", "eval_episodes=5",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);
    for line in csv.lines().filter(|l| l.contains("wormhole_per_weight")) {
        assert!(line.contains(",false,0,0,,,"), "{line}");
    }
    let text = fs::read_to_string(out.join("table.txt")).unwrap();
    assert!(text.contains("Wavelet Transform"));
    let row = text.lines().find(|l| l.starts_with("wormhole_per_weight")).unwrap();
    assert_eq!(row.matches(" -").count(), 3, "{row}");
    assert_eq!(fs::read_to_string(out.join("cells.csv")).unwrap().lines().count(), 1 + 2 * 2 * 3);
}

#[test]
fn mnist_table_without_files_flags_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o = wormhole(&[
        "table", "--task", "mnist", "--seeds", "1", "--out", s(&out), "--set", "epochs=1", "--set", "eval_episodes=2",
        "--set", "meta_batch=2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("table.txt")).unwrap();
    assert!(text.starts_with("# mnist data: synthetic fallback"), "{text}");
    assert!(fs::read_to_string(out.join("table.csv")).unwrap().lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn diagnostics() {
    let o = wormhole(&["diag", "gradcheck", "--seed", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("max first-order rel err"));
    // Seed 0 contains a graph where finite differences cannot reach 1e-6.
    assert_eq!(code(&wormhole(&["diag", "gradcheck", "--seed", "0"])), 4);

    let dir = tempfile::tempdir().unwrap();
    let o = wormhole(&["diag", "cstar", "--sizes", "10,50,500", "--trials", "51", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("cstar.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(csv.lines().next().unwrap(), "batch_size,median_abs_dev");

    let o = wormhole(&["diag", "conflict", "--flipped"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("min off-diagonal cosine: -1.000000000"));
    let o = wormhole(&["diag", "conflict", "--episodes", "6", "--kind", "tanh_scalar"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("episodes: 6"));
    assert_eq!(code(&wormhole(&["diag", "conflict", "--episodes", "1"])), 1);
}
