use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pde_surrogate::nn::{self, Checkpoint};
use pde_surrogate::sampler;
use serde_json::{json, Value};

fn pdesur(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdesur")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn last_number(s: &str, key: &str) -> f64 {
    let line = s.lines().find(|l| l.starts_with(key)).unwrap();
    line.split_whitespace().nth(key.split_whitespace().count()).unwrap().parse().unwrap()
}

#[test]
fn generate_is_deterministic_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "task": "elliptic_conductance", "dim": 2, "n": 8, "low": 0.3, "high": 3.0, "seed": 3,
        "generate": {"splits": [{"output": "a.psd1", "count": 40}, {"output": "b.psd1", "count": 20}]}
    });
    let path = write_config(dir.path(), "run.json", &cfg);
    let o = pdesur(&["generate", "--config", &path, "--workers", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("40 samples"));
    let first = fs::read(dir.path().join("a.psd1")).unwrap();
    let side1 = fs::read(dir.path().join("a.json")).unwrap();
    let o = pdesur(&["generate", "--config", &path, "--workers", "3"]);
    assert!(o.status.success());
    assert_eq!(first, fs::read(dir.path().join("a.psd1")).unwrap());
    assert_eq!(side1, fs::read(dir.path().join("a.json")).unwrap());
    let side: Value = serde_json::from_slice(&side1).unwrap();
    assert_eq!(side["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(side["spec"]["seed"], 3);
    let b: Value = serde_json::from_slice(&fs::read(dir.path().join("b.json")).unwrap()).unwrap();
    assert_eq!(b["spec"]["seed"], 4);

    let o = pdesur(&["generate", "--config", &path, "--seed", "9"]);
    assert!(o.status.success());
    assert_ne!(first, fs::read(dir.path().join("a.psd1")).unwrap());
}

#[test]
fn degenerate_range_gives_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    for (task, value, expected) in [("elliptic_conductance", 2.5, 2.5), ("nlse_ground_state", 4.0, 6.0)] {
        let cfg = json!({
            "task": task, "dim": 2, "n": 8, "low": value, "high": value,
            "generate": {"splits": [{"output": "c.psd1", "count": 1}]}
        });
        let path = write_config(dir.path(), "c.json.cfg", &cfg);
        assert!(pdesur(&["generate", "--config", &path]).status.success());
        let ds = sampler::read_dataset(&dir.path().join("c.psd1")).unwrap();
        assert!((ds.targets[0] - expected).abs() < 1e-10, "{task}: {}", ds.targets[0]);
        let o = pdesur(&["solve", dir.path().join("c.psd1").to_str().unwrap()]);
        let v: f64 = stdout(&o).trim().parse().unwrap();
        assert_eq!(v, ds.targets[0]);
    }
}

#[test]
fn solve_reads_text_fields() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("a.csv");
    fs::write(&f, "2,2,2,2\n2,2,2,2\n2,2,2,2\n2,2,2,2\n").unwrap();
    let f = f.to_str().unwrap();
    let o = pdesur(&["solve", f, "--task", "elliptic_conductance"]);
    assert!(o.status.success());
    assert!((stdout(&o).trim().parse::<f64>().unwrap() - 2.0).abs() < 1e-12);
    let o = pdesur(&["solve", f, "--task", "harmonic_mean1d", "--dim", "1"]);
    assert!((stdout(&o).trim().parse::<f64>().unwrap() - 2.0).abs() < 1e-12);
    let o = pdesur(&["solve", f, "--task", "elliptic_conductance", "--dim", "3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = pdesur(&["solve", f, "--task", "nlse_ground_state"]);
    assert!((stdout(&o).trim().parse::<f64>().unwrap() - 4.0).abs() < 1e-10);
    let o = pdesur(&["solve", f]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(dir.path().join("bad.csv"), "1,2,x").unwrap();
    let o = pdesur(&["solve", dir.path().join("bad.csv").to_str().unwrap(), "--task", "elliptic_conductance"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pdesur(&["train", "--config", "/nonexistent/run.json"]).status.code(), Some(1));
    let unknown = write_config(dir.path(), "u.json", &json!({"task": "elliptic_conductance", "dim": 2, "n": 8, "low": 1, "high": 2, "bogus": 1}));
    assert_eq!(pdesur(&["generate", "--config", &unknown]).status.code(), Some(1));
    let missing = write_config(dir.path(), "m.json", &json!({
        "task": "elliptic_conductance", "dim": 2, "n": 8, "low": 1, "high": 2,
        "train": {"train_data": "none.psd1", "validation_data": "none.psd1",
                  "architecture": {"kind": "single_conv", "alpha": 4},
                  "checkpoint": "m.bin", "metrics": "m.csv"}
    }));
    assert_eq!(pdesur(&["train", "--config", &missing]).status.code(), Some(1));
    let noise = write_config(dir.path(), "v.json", &json!({
        "task": "elliptic_conductance", "dim": 2, "n": 4, "low": 0.3, "high": 3.0,
        "verify": {"settings": {"c_values": [0.5]}, "report": "r.csv"}
    }));
    assert_eq!(pdesur(&["verify", "--config", &noise]).status.code(), Some(1));
    assert_eq!(pdesur(&["generate"]).status.code(), Some(1));
    assert_eq!(pdesur(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "task": "elliptic_conductance", "dim": 2, "n": 4, "low": 0.3, "high": 3.0, "seed": 1,
        "generate": {"splits": [{"output": "tr.psd1", "count": 10}]},
        "train": {
            "train_data": "tr.psd1", "validation_data": "tr.psd1",
            "architecture": {"kind": "single_conv", "alpha": 16},
            "optimizer": {"learning_rate": 0.01, "batch_size": 50, "epochs": 4000, "plateau_patience": 50},
            "checkpoint": "model.bin", "metrics": "metrics.csv"
        },
        "eval": {"checkpoint": "model.bin", "dataset": "tr.psd1", "predictions": "pred.csv"}
    });
    let path = write_config(dir.path(), "run.json", &cfg);
    assert!(pdesur(&["generate", "--config", &path]).status.success());
    let o = pdesur(&["train", "--config", &path]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let train_err = last_number(&out, "train relative error");
    assert!(train_err < 1e-3, "{out}");

    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# config_hash="));
    let best: usize = out.lines().next().unwrap().split_whitespace().nth(2).unwrap().parse().unwrap();
    let row = metrics.lines().nth(1 + best).unwrap();
    let logged: f64 = row.split(',').nth(2).unwrap().parse().unwrap();

    let o = pdesur(&["eval", "--config", &path]);
    assert!(o.status.success());
    let eval_err = last_number(&stdout(&o), "relative error");
    assert_eq!(eval_err.to_bits(), logged.to_bits(), "{out}\n{row}\n{eval_err}");
    assert_eq!(eval_err.to_bits(), train_err.to_bits());
    let pred = fs::read_to_string(dir.path().join("pred.csv")).unwrap();
    assert_eq!(pred.lines().count(), 12);

    let o = pdesur(&["train", "--config", &path]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("metrics.csv")).unwrap(), metrics);

    let ck = Checkpoint::read(&dir.path().join("model.bin")).unwrap();
    let mut ds = sampler::read_dataset(&dir.path().join("tr.psd1")).unwrap();
    ds.targets = pde_surrogate::train::predict(&ck.spec, &ck.params, ck.whitening.as_ref(), &ds.inputs).unwrap();
    sampler::write_dataset(&dir.path().join("tr.psd1"), &ds).unwrap();
    let o = pdesur(&["eval", "--config", &path]);
    assert_eq!(last_number(&stdout(&o), "relative error"), 0.0);
}

#[test]
fn verify_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "task": "elliptic_conductance", "dim": 2, "n": 4, "low": 0.3, "high": 3.0,
        "verify": {"settings": {"c_values": [0.0, 0.2], "trials": 3, "steps": [16, 64, 256]}, "report": "r.csv"}
    });
    let path = write_config(dir.path(), "v.json", &cfg);
    let o = pdesur(&["verify", "--config", &path]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("0 descent violations"));
    let report = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 2 + 6);
    assert!(lines[1].starts_with("trial,n,c,dt,delta,steps,descent_violations"));
    assert!(lines[1].ends_with("gap_16,gap_64,gap_256"));
}

#[test]
fn fit_reciprocal_on_synthetic_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let spec = nn::build_1d_three_stage_arch(8, 16, 3).unwrap();
    let mut params = vec![0.0; nn::param_count(&spec).unwrap()];
    // Stage 1 ends with the bias at offset 16 + 16 + 256 + 16 + 16.
    params[320] = 3.0;
    let ck = Checkpoint {
        spec,
        whitening: None,
        config_hash: String::new(),
        metadata: Value::Null,
        params,
    };
    ck.write(&dir.path().join("const.bin")).unwrap();
    let cfg = json!({
        "task": "harmonic_mean1d", "dim": 1, "n": 8, "low": 0.3, "high": 1.5,
        "fit_reciprocal": {"checkpoint": "const.bin", "curve": "curve.csv"}
    });
    let path = write_config(dir.path(), "f.json", &cfg);
    let o = pdesur(&["fit-reciprocal", "--config", &path]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(last_number(&out, "beta1").abs() < 1e-12);
    assert!((last_number(&out, "beta2") - 3.0).abs() < 1e-12);
    assert_eq!(fs::read_to_string(dir.path().join("curve.csv")).unwrap().lines().count(), 202);

    let conv = Checkpoint {
        spec: nn::build_single_conv_arch(8, 1, 2).unwrap(),
        params: vec![0.0; 21],
        ..ck
    };
    conv.write(&dir.path().join("const.bin")).unwrap();
    assert_eq!(pdesur(&["fit-reciprocal", "--config", &path]).status.code(), Some(2));
}
