use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn koopflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_koopflow"))
        .args(args)
        .current_dir(dir)
        .env("KOOPFLOW_THREADS", "1")
        .output()
        .expect("spawn koopflow")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = koopflow(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    koopflow(dir, args).status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn count_files(dir: &Path) -> usize {
    fs::read_dir(dir).unwrap().count()
}

const GEN_HF: &[&str] = &[
    "generate", "--system", "pendulum", "--dt", "0.05", "--steps", "41", "--train", "6", "--val",
    "2", "--test", "2", "--seed", "3", "--out", "hf",
];
const TRAIN: &[&str] = &[
    "train", "--data", "lf", "--out", "m", "--stage1-epochs", "2", "--stage2-epochs", "2",
    "--hidden", "8", "--latent-dim", "4", "--horizon-cap", "5", "--seed", "1",
];

/// hf (dt 0.05), lf (dt 0.2) and a tiny model trained on lf.
fn workspace() -> TempDir {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, GEN_HF);
    ok(d, &["generate", "--subsample-from", "hf", "--factor", "4", "--out", "lf"]);
    ok(d, TRAIN);
    tmp
}

#[test]
fn generate_writes_every_split() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let out = ok(
        d,
        &[
            "generate", "--system", "pendulum", "--dt", "0.01", "--duration", "10", "--train",
            "100", "--val", "25", "--test", "10", "--seed", "42", "--out", "pend_hf",
        ],
    );
    assert!(out.contains("T = 1001"), "{out}");
    let files: usize = ["train", "val", "test"]
        .iter()
        .map(|s| count_files(&d.join("pend_hf").join(s)))
        .sum();
    assert_eq!(files, 135);

    ok(d, &["generate", "--system", "pendulum", "--subsample-from", "pend_hf", "--factor", "20"]);
    let meta = json(&d.join("pend_hf_x20/meta.json"));
    assert!((meta["dt"].as_f64().unwrap() - 0.2).abs() < 1e-12);

    ok(d, &["generate", "--system", "fluidflow", "--dt", "0.02", "--steps", "121", "--train", "1", "--val", "0", "--test", "0", "--out", "fluid"]);
    let csv = fs::read_to_string(d.join("fluid/train/traj_0000.csv")).unwrap();
    assert_eq!(csv.lines().count(), 122);
}

#[test]
fn exit_codes_separate_usage_from_runtime_failures() {
    let tmp = workspace();
    let d = tmp.path();
    assert_eq!(code(d, &["train", "--data", "missing", "--out", "x"]), 2);
    assert_eq!(code(d, &["generate", "--system", "nosuch", "--dt", "0.1", "--steps", "5"]), 2);
    assert_eq!(code(d, &["generate", "--bogus-flag"]), 2);
    assert_eq!(code(d, &["eval", "--checkpoint", "nope.ckpt", "--data", "hf"]), 2);
    // 0.07 does not divide the 0.05 ground-truth grid.
    assert_eq!(
        code(d, &["eval", "--checkpoint", "m/model.ckpt", "--data", "hf", "--eval-dt", "0.07", "--out", "e"]),
        1
    );
    assert_eq!(code(d, &["eval", "--checkpoint", "m/model.ckpt", "--data", "hf", "--out", "e"]), 0);
}

#[test]
fn runs_are_byte_identical() {
    let a = workspace();
    let b = workspace();
    for f in ["hf/test/traj_0001.csv", "lf/meta.json", "m/model.ckpt", "m/history.csv", "m/generator.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
    for tmp in [&a, &b] {
        let d = tmp.path();
        ok(d, &["eval", "--checkpoint", "m/model.ckpt", "--data", "hf", "--out", "e"]);
        ok(d, &["plot", "overlay", "--truth", "hf/test/traj_0000.csv", "--out", "p"]);
    }
    for f in ["e/report.json", "e/curve.csv", "e/curves/traj_0000.csv", "p/component_1.svg"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn from_config_reproduces_a_run() {
    let tmp = workspace();
    let d = tmp.path();
    ok(d, &["--from-config", "m/run.json", "--into", "m2"]);
    assert_eq!(fs::read(d.join("m/model.ckpt")).unwrap(), fs::read(d.join("m2/model.ckpt")).unwrap());
    ok(d, &["--from-config", "hf/run.json", "--into", "hf2"]);
    assert_eq!(
        fs::read(d.join("hf/train/traj_0003.csv")).unwrap(),
        fs::read(d.join("hf2/train/traj_0003.csv")).unwrap()
    );
    assert_eq!(code(d, &["--from-config", "hf/meta.json"]), 2);
}

#[test]
fn run_json_echoes_resolved_defaults() {
    let tmp = workspace();
    let d = tmp.path();
    let mut args: Vec<&str> = TRAIN.iter().map(|a| if *a == "m" { "abl" } else { a }).collect();
    args.push("--ablate-orth");
    ok(d, &args);
    let run = json(&d.join("abl/run.json"));
    let cfg = &run["resolved"]["train_config"];
    assert_eq!(cfg["beta1"].as_f64(), Some(0.0));
    assert_eq!(cfg["beta2"].as_f64(), Some(0.0));
    assert!(cfg["adam"]["lr"].is_number());
    assert_eq!(run["resolved"]["source_dt"].as_f64(), Some(0.2));
}

#[test]
fn eval_methods_write_reports() {
    let tmp = workspace();
    let d = tmp.path();
    for method in ["continuous", "latent-interp", "discrete"] {
        let args = ["eval", "--checkpoint", "m/model.ckpt", "--data", "hf", "--method", method];
        let eval_dt = if method == "discrete" { "0.2" } else { "0.05" };
        let out = ok(d, &[&args[..], &["--eval-dt", eval_dt]].concat());
        assert!(out.contains("aggregate MSE"), "{out}");
        let report = json(&d.join(format!("m/eval_{method}/report.json")));
        assert_eq!(report["method"], method);
        assert!(report["aggregate_mse"].as_f64().unwrap() >= 0.0);
        assert_eq!(count_files(&d.join(format!("m/eval_{method}/curves"))), 2);
    }
    ok(d, &["extract", "--checkpoint", "m/model.ckpt", "--data", "lf", "--out", "m/g2.json"]);
    assert!(d.join("m/g2.run.json").exists());
}

#[test]
fn upsample_fills_the_fine_grid() {
    let tmp = workspace();
    let d = tmp.path();
    ok(d, &["upsample", "--checkpoint", "m/model.ckpt", "--input", "lf/test/traj_0000.csv", "--target-dt", "0.05", "--out", "up"]);
    let csv = fs::read_to_string(d.join("up/traj_0000.csv")).unwrap();
    // 11 coarse samples at dt 0.2 span 2 s, i.e. 41 fine samples.
    assert_eq!(csv.lines().count(), 42);
    assert_eq!(
        code(d, &["upsample", "--checkpoint", "m/model.ckpt", "--data", "lf", "--target-dt", "0.05", "--method", "latent-interp", "--reanchor", "--out", "u2"]),
        2
    );
}

#[test]
fn lyapunov_of_a_linear_flow_matches_its_eigenvalues() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["lyapunov", "--flow", "linear:-1,0;0,-2", "--steps", "5000", "--out", "ly"]);
    let doc = json(&d.join("ly/lyapunov.json"));
    let ex: Vec<f64> = doc["result"]["exponents"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!((ex[0] + 1.0).abs() < 1e-9 && (ex[1] + 2.0).abs() < 1e-9, "{ex:?}");
    assert_eq!(doc["config"]["steps"], 5000);
    assert_eq!(code(d, &["lyapunov", "--flow", "linear:1,2;3", "--out", "x"]), 2);
    assert_eq!(code(d, &["lyapunov", "--flow", "wrong", "--out", "x"]), 2);
}

#[test]
fn lyapunov_of_a_model_needs_a_start() {
    let tmp = workspace();
    let d = tmp.path();
    assert_eq!(code(d, &["lyapunov", "--flow", "model:m/model.ckpt", "--out", "x"]), 2);
    ok(d, &["lyapunov", "--flow", "model:m/model.ckpt", "--x0", "0.5,0", "--steps", "200", "--out", "lm"]);
    assert!(d.join("lm/lyapunov.json").exists());
}

#[test]
fn plots_cover_overlay_error_and_phase() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--system", "lorenz63", "--dt", "0.01", "--steps", "300", "--train", "1", "--val", "0", "--test", "1", "--out", "lz"]);
    ok(d, &["plot", "overlay", "--truth", "lz/test/traj_0000.csv", "--pred", "lz/train/traj_0000.csv", "--out", "p"]);
    for c in 0..3 {
        let svg = fs::read_to_string(d.join(format!("p/component_{c}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("prediction"));
    }
    ok(d, &["plot", "phase", "--input", "lz/test/traj_0000.csv", "--axes", "0,2", "--out", "p"]);
    let svg = fs::read_to_string(d.join("p/phase_0_2.svg")).unwrap();
    assert!(svg.contains("<polyline"));

    fs::write(d.join("curve.csv"), "t,mse\n0,0\n0.1,0.001\n0.2,0.01\n").unwrap();
    ok(d, &["plot", "error", "--curve", "curve.csv", "--log10", "--out", "p"]);
    let svg = fs::read_to_string(d.join("p/error.svg")).unwrap();
    assert!(svg.contains("log10 scale"));

    fs::write(d.join("bad.csv"), "t,x\n0,1\n0.1\n").unwrap();
    assert_eq!(code(d, &["plot", "error", "--curve", "bad.csv", "--out", "p"]), 1);
}
