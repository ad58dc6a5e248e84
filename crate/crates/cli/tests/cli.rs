use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use xbar_core::circuit::{oracle_solve, ConductanceMatrix, CrossbarConfig};
use xbar_core::metrics::{gen_matrix, gen_values, KernelType};

fn xbar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xbar"))
        .args(args)
        .env_remove("XBAR_THREADS")
        .output()
        .expect("spawn xbar")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_vec(v).unwrap()).unwrap();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn simulate_files(dir: &Path, config: Option<Value>, g: Value, v: Value) -> Value {
    let gp = dir.join("g.json");
    let vp = dir.join("v.json");
    let out = dir.join("out.json");
    write_json(&gp, &g);
    write_json(&vp, &v);
    let mut args = vec!["simulate", "--conductance", s(&gp), "--input", s(&vp), "--out", s(&out)];
    let cp = dir.join("cfg.json");
    if let Some(c) = config {
        write_json(&cp, &c);
        args.extend(["--config", s(&cp)]);
    }
    ok(xbar(&args));
    read_json(&out)
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs())
}

#[test]
fn simulate_single_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate_files(dir.path(), None, serde_json::json!([[1.0 / 15000.0]]), serde_json::json!([0.2]));
    let i = floats(&out["i_out"])[0];
    assert!(close(i, 0.2 / 15004.0, 1e-12), "{i}");
}

#[test]
fn simulate_ideal_crossbar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({"crossbar": {"r_wire": 0.0, "r_in": 0.0, "r_out": 0.0}});
    let g = [[5e-5, 1e-5, 2e-5], [3e-5, 6e-5, 4e-6], [4e-6, 4e-6, 6.6e-5]];
    let v = [0.2, 0.05, 0.1];
    let out = simulate_files(dir.path(), Some(cfg), serde_json::json!(g), serde_json::json!(v));
    let i = floats(&out["i_out"]);
    for j in 0..3 {
        let want: f64 = (0..3).map(|r| v[r] * g[r][j]).sum();
        assert!(close(i[j], want, 1e-9), "{} vs {want}", i[j]);
    }
}

#[test]
fn simulate_two_by_two_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let g = 1.0 / 15000.0;
    let out = simulate_files(dir.path(), None, serde_json::json!([[g, g], [g, g]]), serde_json::json!([0.2, 0.2]));
    let want = oracle_solve(&CrossbarConfig::new(2, 2), &ConductanceMatrix::filled(2, 2, g), &[0.2, 0.2]).unwrap();
    let i = floats(&out["i_out"]);
    for j in 0..2 {
        assert!(close(i[j], want.i_out[j], 1e-9));
    }
    assert_eq!(floats(&out["v_top"]).len(), 4);
}

#[test]
fn missing_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = xbar(&["simulate", "--conductance", s(&missing), "--input", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_error_exits_1() {
    assert_eq!(code(&xbar(&["simulate", "--no-such-flag"])), 1);
    assert_eq!(code(&xbar(&[])), 1);
    assert_eq!(code(&xbar(&["--help"])), 0);
}

#[test]
fn zero_bit_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cp = dir.path().join("cfg.json");
    write_json(&cp, &serde_json::json!({"dac_bits": 0}));
    let gp = dir.path().join("g.json");
    write_json(&gp, &serde_json::json!([[1e-5]]));
    let o = xbar(&["simulate", "--config", s(&cp), "--conductance", s(&gp), "--input", s(&gp), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_config_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cp = dir.path().join("cfg.json");
    write_json(&cp, &serde_json::json!({"crossbar": {"r_wires": 1.0}}));
    let o = xbar(&["table", "--out", s(&dir.path().join("t.csv"))]);
    assert_eq!(code(&o), 0);
    let gp = dir.path().join("g.json");
    write_json(&gp, &serde_json::json!([[1e-5]]));
    let o = xbar(&["simulate", "--config", s(&cp), "--conductance", s(&gp), "--input", s(&gp), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn input_over_sense_voltage_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate_exit(dir.path(), serde_json::json!([[1e-5]]), serde_json::json!([0.5]));
    assert_eq!(code(&o), 2);
}

fn simulate_exit(dir: &Path, g: Value, v: Value) -> Output {
    let gp = dir.join("g.json");
    let vp = dir.join("v.json");
    write_json(&gp, &g);
    write_json(&vp, &v);
    xbar(&["simulate", "--conductance", s(&gp), "--input", s(&vp), "--out", s(&dir.join("o.json"))])
}

fn conv0_files(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let w = gen_matrix(KernelType::Gaussian, 27, 16, 3);
    let rows: Vec<Vec<f64>> = w.chunks(16).map(<[f64]>::to_vec).collect();
    let samples: Vec<Vec<f64>> = (0..40).map(|k| gen_values(27, 0.3, 100 + k).unwrap()).collect();
    let wp = dir.join("w.json");
    let sp = dir.join("x.json");
    write_json(&wp, &serde_json::json!(rows));
    write_json(&sp, &serde_json::json!(samples));
    (wp, sp)
}

#[test]
fn build_engine_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (wp, sp) = conv0_files(dir.path());
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(xbar(&["build-engine", "--weights", s(&wp), "--samples", s(&sp), "--out", s(&a), "--seed", "7"]));
    ok(xbar(&["--threads", "1", "build-engine", "--weights", s(&wp), "--samples", s(&sp), "--out", s(&b), "--seed", "7"]));
    let blob = |p: &Path| std::fs::read(p.with_extension("bin")).unwrap();
    assert_eq!(blob(&a), blob(&b));
    let mut da = read_json(&a);
    let db = read_json(&b);
    da["blob_file"] = db["blob_file"].clone();
    assert_eq!(da, db);

    assert_eq!(da["config"]["rows"], 27);
    assert_eq!(da["config"]["cols"], 16);
    assert!(da["conversion"]["iterations"].as_u64().unwrap() >= 1);
    assert!(da["v_conv"].as_array().unwrap().len() == 27);
    assert!(da["signal_search"]["chosen"].as_f64().is_some());
}

#[test]
fn build_engine_rejects_weights_larger_than_crossbar() {
    let dir = tempfile::tempdir().unwrap();
    let (wp, sp) = conv0_files(dir.path());
    let cp = dir.path().join("cfg.json");
    write_json(&cp, &serde_json::json!({"crossbar": {"rows": 16, "cols": 16}}));
    let o = xbar(&["build-engine", "--config", s(&cp), "--weights", s(&wp), "--samples", s(&sp), "--out", s(&dir.path().join("e.json"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn build_engine_rejects_non_finite_weights() {
    let dir = tempfile::tempdir().unwrap();
    let wp = dir.path().join("w.json");
    std::fs::write(&wp, "[[1.0, 2.0], [1e999, 0.0]]").unwrap();
    let sp = dir.path().join("x.json");
    write_json(&sp, &serde_json::json!([[0.5, 0.5]]));
    let o = xbar(&["build-engine", "--weights", s(&wp), "--samples", s(&sp), "--out", s(&dir.path().join("e.json"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn run_net_bits_and_taps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = d.join("m/tiny.json");
    let images = d.join("im.mten");
    let labels = d.join("lab.mten");
    ok(xbar(&["gen-model", "--arch", "tiny", "--input", "6x6x3", "--classes", "4", "--out", s(&model)]));
    ok(xbar(&["gen-images", "--count", "6", "--shape", "6x6x3", "--out", s(&images), "--label-model", s(&model), "--labels-out", s(&labels)]));
    let out = d.join("run");
    ok(xbar(&[
        "run-net", "--model", s(&model), "--images", s(&images), "--labels", s(&labels), "--bits", "none,8,6,4", "--taps", "all", "--out", s(&out),
    ]));
    let acc = std::fs::read_to_string(out.join("accuracy.csv")).unwrap();
    let lines: Vec<&str> = acc.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("none,6,1,1,FC,"), "{}", lines[1]);
    for bits in ["none", "8", "6", "4"] {
        for layer in ["Conv0", "Conv1", "Conv2", "FC"] {
            assert!(out.join(format!("errors_{bits}_{layer}.csv")).exists(), "{bits} {layer}");
        }
        assert!(out.join(format!("report_{bits}.json")).exists());
    }
    let n_csv = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("errors_"))
        .count();
    assert_eq!(n_csv, 16);
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["rows"].as_array().unwrap().len(), 4);
    assert_eq!(summary["software_accuracy"], 1.0);

    // Rerun with another thread count: every file except the log is identical.
    let again = d.join("again");
    ok(xbar(&[
        "--threads", "1", "run-net", "--model", s(&model), "--images", s(&images), "--labels", s(&labels), "--bits", "none,8,6,4", "--taps", "all", "--out", s(&again),
    ]));
    for e in std::fs::read_dir(&out).unwrap() {
        let name = e.unwrap().file_name();
        if name != "run.log" {
            assert_eq!(std::fs::read(out.join(&name)).unwrap(), std::fs::read(again.join(&name)).unwrap(), "{name:?}");
        }
    }
}

#[test]
fn run_net_rejects_bad_bits_and_taps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = d.join("tiny.json");
    let images = d.join("im.mten");
    ok(xbar(&["gen-model", "--arch", "tiny", "--input", "6x6x3", "--classes", "3", "--out", s(&model)]));
    ok(xbar(&["gen-images", "--count", "2", "--shape", "6x6x3", "--out", s(&images)]));
    let o = xbar(&["run-net", "--model", s(&model), "--images", s(&images), "--bits", "0", "--out", s(&d.join("r"))]);
    assert_eq!(code(&o), 2);
    let o = xbar(&["run-net", "--model", s(&model), "--images", s(&images), "--taps", "Conv9", "--out", s(&d.join("r"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn corrupted_model_blob_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = d.join("tiny.json");
    ok(xbar(&["gen-model", "--arch", "tiny", "--out", s(&model)]));
    let blob = d.join("tiny.bin");
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
    let images = d.join("im.mten");
    ok(xbar(&["gen-images", "--count", "1", "--shape", "8x8x3", "--out", s(&images)]));
    let o = xbar(&["run-net", "--model", s(&model), "--images", s(&images), "--out", s(&d.join("r"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn layer_exp_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    ok(xbar(&[
        "layer-exp", "--kernel-type", "1", "--crossbar-size", "18x4", "--sparsity", "0,0.5", "--conv-amp-sweep", "--eval-samples", "20", "--out", s(&out),
    ]));
    let v = std::fs::read_to_string(out.join("variants.csv")).unwrap();
    assert_eq!(v.lines().count(), 1 + 2 * 6);
    let a = std::fs::read_to_string(out.join("amplitudes.csv")).unwrap();
    assert_eq!(a.lines().count(), 1 + 2 * 7);
    assert!(out.join("histogram.csv").exists());
    assert!(out.join("run.log").exists());
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["result"]["variants"].as_array().unwrap().len(), 12);
}

#[test]
fn layer_exp_rejects_bad_size_and_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let o = xbar(&["layer-exp", "--kernel-type", "4", "--crossbar-size", "8x4", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let o = xbar(&["layer-exp", "--kernel-type", "1", "--crossbar-size", "8by4", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn table_lists_resnet20_mapping() {
    let o = ok(xbar(&["table"]));
    let t = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = t.lines().collect();
    assert_eq!(lines[0], "layer,rows,cols,iterations,parallel");
    assert_eq!(lines[1], "Conv0,27,16,1024,false");
    assert_eq!(*lines.last().unwrap(), "Total,,,9089,");
}

#[test]
fn schema_is_json() {
    let o = ok(xbar(&["schema"]));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["type"], "object");
}

#[test]
fn bad_thread_env_exits_2() {
    let o = Command::new(env!("CARGO_BIN_EXE_xbar")).arg("schema").env("XBAR_THREADS", "zero").output().unwrap();
    assert_eq!(code(&o), 2);
}
