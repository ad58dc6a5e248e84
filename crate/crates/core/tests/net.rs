use std::collections::BTreeSet;
use std::path::Path;

use sha2::{Digest, Sha256};
use xbar_core::circuit::CrossbarConfig;
use xbar_core::metrics::{gen_kernel, KernelType, RelErrorStats};
use xbar_core::net::ops::{batchnorm_affine, relu, softmax};
use xbar_core::net::zoo::{resnet20, synthetic_images, tiny_cnn};
use xbar_core::net::{
    build_report, load_model, quantization_sweep, read_tensor, run_batch, run_inference, save_model, software_forward,
    AnalogNetwork, BitSetting, LayerDef, LayerOp, Mode, NetworkModel, PrepareOptions, Taps, Tensor,
};
use xbar_core::{ConvShape, ConvSpec, FeatureMap, XbarError};

fn ideal_options(rows_cols_unused: usize) -> PrepareOptions {
    let _ = rows_cols_unused;
    PrepareOptions::new(CrossbarConfig::ideal(1, 1))
}

fn he_spec(shape: ConvShape, seed: u64) -> ConvSpec {
    let w = gen_kernel(KernelType::Gaussian, [shape.kernel_h, shape.kernel_w, shape.in_channels, shape.out_channels], seed);
    let s = (2.0 / shape.unrolled_rows() as f64).sqrt();
    ConvSpec::new(shape, w.into_iter().map(|v| v * s).collect()).unwrap()
}

/// input → conv → relu → conv → add(input path) → relu → gap → fc → softmax
fn residual_model(seed: u64) -> NetworkModel {
    let defs = vec![
        LayerDef::new("input", LayerOp::Input { shape: [6, 6, 4] }, &[]),
        LayerDef::new("ConvA", LayerOp::Conv { spec: he_spec(ConvShape::new(3, 4, 4, 1, 1), seed), shortcut: false }, &["input"]),
        LayerDef::new("ReLUA", LayerOp::Relu, &["ConvA"]),
        LayerDef::new("ConvB", LayerOp::Conv { spec: he_spec(ConvShape::new(3, 4, 4, 1, 1), seed + 1), shortcut: false }, &["ReLUA"]),
        LayerDef::new("Add", LayerOp::Add, &["ConvB", "input"]),
        LayerDef::new("ReLUB", LayerOp::Relu, &["Add"]),
        LayerDef::new("GAP", LayerOp::GlobalAvgPool, &["ReLUB"]),
        LayerDef::new("FC", LayerOp::Fc { spec: he_spec(ConvShape::new(1, 4, 3, 1, 0), seed + 2) }, &["GAP"]),
        LayerDef::new("Softmax", LayerOp::Softmax, &["FC"]),
    ];
    NetworkModel::from_defs("residual", defs).unwrap()
}

#[test]
fn ideal_analog_equals_software() {
    let model = tiny_cnn([8, 8, 3], 5, 3).unwrap();
    let images = synthetic_images(4, [8, 8, 3], 9).unwrap();
    let net = AnalogNetwork::prepare(&model, &images, &ideal_options(0)).unwrap();
    for im in &images {
        let (soft, _) = run_inference(&net, im, Mode::Software, &Taps::None).unwrap();
        let (analog, report) = run_inference(&net, im, Mode::Analog, &Taps::All).unwrap();
        assert_eq!(soft.len(), 5);
        for (a, s) in analog.iter().zip(&soft) {
            assert!((a - s).abs() <= 1e-6, "{a} vs {s}");
        }
        for l in &report.layers {
            assert!(l.end_to_end.worst <= 1e-6, "{}: {}", l.layer, l.end_to_end.worst);
        }
    }
}

#[test]
fn ideal_residual_network_matches_software_per_activation() {
    let model = residual_model(4);
    let images = synthetic_images(3, [6, 6, 4], 2).unwrap();
    let net = AnalogNetwork::prepare(&model, &images, &ideal_options(0)).unwrap();
    let runs = run_batch(&net, &images, &Taps::All).unwrap();
    for r in &runs {
        for t in &r.traces {
            for (a, s) in t.actual.iter().zip(&t.software) {
                assert!((a - s).abs() <= 1e-6 * (1.0 + s.abs()));
            }
        }
    }
}

#[test]
fn shortcut_add_equals_separate_digital_sum() {
    let model = residual_model(7);
    let image = &synthetic_images(1, [6, 6, 4], 5).unwrap()[0];
    let acts = software_forward(&model, image).unwrap();
    let k = |n: &str| model.layer_index(n).unwrap();
    let conv_b = &acts[k("ConvB")];
    let fused = &acts[k("Add")];
    for i in 0..fused.data.len() {
        assert_eq!(fused.data[i], conv_b.data[i] + image.data[i]);
    }
}

#[test]
fn resnet20_model_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("resnet20.json");
    save_model(&resnet20(1).unwrap(), &path).unwrap();
    let model = load_model(&path).unwrap();
    let crossbar = model.crossbar_layers();
    let names: Vec<&str> = crossbar.iter().map(|&k| model.layers[k].name.as_str()).collect();
    let shortcuts: Vec<&str> = names.iter().copied().filter(|n| n.starts_with("Sum")).collect();
    assert_eq!(shortcuts, ["Sum1", "Sum2", "Sum3"]);
    assert_eq!(names.len() - shortcuts.len(), 20);
    let shapes: BTreeSet<(usize, usize)> = crossbar
        .iter()
        .map(|&k| {
            let s = model.layers[k].op.crossbar_spec().unwrap().shape;
            (s.unrolled_rows(), s.out_channels)
        })
        .collect();
    assert_eq!(shapes.len(), 10);
    assert_eq!(model.input_shape(), [32, 32, 3]);
    assert_eq!(model.classes(), 10);
    for k in ["BN0", "ReLU0", "Add2", "GAP", "Softmax"] {
        assert!(model.layer_index(k).is_some(), "{k}");
    }
    let image = &synthetic_images(1, [32, 32, 3], 1).unwrap()[0];
    let out = software_forward(&model, image).unwrap();
    let probs = &out.last().unwrap().data;
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn model_round_trips_and_detects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let model = residual_model(2);
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    // Weights pass through f32 on disk.
    for (a, b) in model.layers.iter().zip(&back.layers) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.out_shape, b.out_shape);
        if let (Some(x), Some(y)) = (a.op.crossbar_spec(), b.op.crossbar_spec()) {
            for (u, v) in x.weights.iter().zip(&y.weights) {
                assert_eq!(*u as f32 as f64, *v);
            }
        }
    }
    save_model(&back, &dir.path().join("again.json")).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("m.bin")).unwrap(),
        std::fs::read(dir.path().join("again.bin")).unwrap()
    );

    let blob = dir.path().join("m.bin");
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(load_model(&path), Err(XbarError::Checksum { .. })));
    std::fs::remove_file(&blob).unwrap();
    assert!(matches!(load_model(&path), Err(XbarError::Io(_))));
}

fn write_manifest(dir: &Path, layers: serde_json::Value, blob: &[u8]) -> std::path::PathBuf {
    std::fs::write(dir.join("w.bin"), blob).unwrap();
    let manifest = serde_json::json!({
        "name": "hand",
        "layers": layers,
        "blob_file": "w.bin",
        "blob_sha256": hex::encode(Sha256::digest(blob)),
    });
    let path = dir.join("hand.json");
    std::fs::write(&path, serde_json::to_vec(&manifest).unwrap()).unwrap();
    path
}

#[test]
fn hand_written_single_conv_manifest() {
    let dir = tempfile::tempdir().unwrap();
    // 1×1 conv, 2 in, 3 out: unrolled rows = input channels.
    let w: [f32; 6] = [0.5, -1.0, 2.0, 0.25, 0.0, -0.5];
    let blob: Vec<u8> = w.iter().flat_map(|v| v.to_le_bytes()).collect();
    let layers = serde_json::json!([
        {"name": "in", "kind": "input", "params": {"shape": [2, 2, 2]}, "predecessors": [], "blob_offset": 0, "blob_len": 0},
        {"name": "c", "kind": "conv", "params": {"kernel_h": 1, "kernel_w": 1, "in_channels": 2, "out_channels": 3},
         "predecessors": ["in"], "blob_offset": 0, "blob_len": 24},
        {"name": "p", "kind": "softmax", "params": {}, "predecessors": ["c"], "blob_offset": 0, "blob_len": 0}
    ]);
    let path = write_manifest(dir.path(), layers, &blob);
    let model = load_model(&path).unwrap();
    assert_eq!(model.crossbar_layers(), vec![1]);
    let spec = model.layers[1].op.crossbar_spec().unwrap();
    for c in 0..2 {
        for o in 0..3 {
            assert_eq!(spec.weight(0, 0, c, o), w[c * 3 + o] as f64);
        }
    }
    let image = FeatureMap::new(2, 2, 2, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.2, 0.4]).unwrap();
    let acts = software_forward(&model, &image).unwrap();
    let conv = &acts[1].data;
    assert_eq!(&conv[0..3], &[0.5, -1.0, 2.0]);
    assert_eq!(&conv[3..6], &[0.25, 0.0, -0.5]);
    let net = AnalogNetwork::prepare(&model, &[image.clone()], &ideal_options(0)).unwrap();
    assert!(net.engine("c").is_some());
    assert!(net.engine("p").is_none());
}

#[test]
fn malformed_manifests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let input = serde_json::json!({"name": "in", "kind": "input", "params": {"shape": [1, 1, 1]}, "predecessors": [], "blob_offset": 0, "blob_len": 0});
    let soft = |pred: &str| serde_json::json!({"name": "p", "kind": "softmax", "params": {}, "predecessors": [pred], "blob_offset": 0, "blob_len": 0});
    let relu = |name: &str, pred: &str| serde_json::json!({"name": name, "kind": "relu", "params": {}, "predecessors": [pred], "blob_offset": 0, "blob_len": 0});
    let cases = [
        serde_json::json!([input, soft("nowhere")]),
        serde_json::json!([input, relu("a", "b"), relu("b", "a"), soft("a")]),
        serde_json::json!([input, input.clone(), soft("in")]),
        serde_json::json!([input, relu("r", "in")]),
        serde_json::json!([input, {"name": "r", "kind": "relu", "params": {"x": 1}, "predecessors": ["in"], "blob_offset": 0, "blob_len": 0}, soft("r")]),
        serde_json::json!([input, {"name": "a", "kind": "add", "params": {}, "predecessors": ["in"], "blob_offset": 0, "blob_len": 0}, soft("a")]),
        serde_json::json!([input, {"name": "c", "kind": "conv", "params": {"kernel_h": 1, "kernel_w": 1, "in_channels": 1, "out_channels": 1},
            "predecessors": ["in"], "blob_offset": 0, "blob_len": 8}, soft("c")]),
        serde_json::json!([input, {"name": "c", "kind": "mystery", "params": {}, "predecessors": ["in"], "blob_offset": 0, "blob_len": 0}, soft("c")]),
    ];
    for (k, layers) in cases.into_iter().enumerate() {
        let path = write_manifest(dir.path(), layers, &[0u8; 4]);
        let err = load_model(&path).unwrap_err();
        assert!(matches!(err, XbarError::Format(_)), "case {k}: {err:?}");
    }
}

#[test]
fn tensor_file_layout() {
    let mut bytes = b"MTEN".to_vec();
    for v in [1u32, 3, 1, 1, 2] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for v in [0.25f32, 1.0] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.mten");
    std::fs::write(&p, &bytes).unwrap();
    let t = read_tensor(&p).unwrap();
    assert_eq!(t.dims, vec![1, 1, 2]);
    assert_eq!(t.data, vec![0.25, 1.0]);
    assert_eq!(t.to_bytes(), bytes);
    let ims = t.to_images().unwrap();
    assert_eq!(ims.len(), 1);
    assert_eq!(ims[0].get(0, 0, 1), 1.0);
    let mut bad = bytes.clone();
    bad.push(0);
    assert!(Tensor::from_bytes(&bad).is_err());
    assert!(Tensor::from_bytes(&bytes[..bytes.len() - 2]).is_err());
}

#[test]
fn crossbar_inputs_must_be_non_negative() {
    let defs = vec![
        LayerDef::new("input", LayerOp::Input { shape: [4, 4, 2] }, &[]),
        LayerDef::new("A", LayerOp::Conv { spec: he_spec(ConvShape::new(3, 2, 2, 1, 1), 1), shortcut: false }, &["input"]),
        LayerDef::new("B", LayerOp::Conv { spec: he_spec(ConvShape::new(3, 2, 2, 1, 1), 2), shortcut: false }, &["A"]),
        LayerDef::new("Softmax", LayerOp::Softmax, &["B"]),
    ];
    let model = NetworkModel::from_defs("signed", defs).unwrap();
    let images = synthetic_images(2, [4, 4, 2], 1).unwrap();
    let err = AnalogNetwork::prepare(&model, &images, &ideal_options(0));
    let err = match err {
        Err(e) => e,
        Ok(net) => run_inference(&net, &images[0], Mode::Analog, &Taps::None).unwrap_err(),
    };
    assert!(matches!(err, XbarError::Contract(_)), "{err:?}");
}

#[test]
fn images_must_be_normalized() {
    let model = tiny_cnn([4, 4, 1], 2, 1).unwrap();
    let bad = FeatureMap::new(4, 4, 1, vec![1.5; 16]).unwrap();
    assert!(matches!(software_forward(&model, &bad), Err(XbarError::Contract(_))));
    let wrong = FeatureMap::new(4, 3, 1, vec![0.5; 12]).unwrap();
    assert!(software_forward(&model, &wrong).is_err());
}

#[test]
fn report_aggregates_match_rows() {
    let model = tiny_cnn([8, 8, 3], 4, 2).unwrap();
    let images = synthetic_images(3, [8, 8, 3], 4).unwrap();
    let net = AnalogNetwork::prepare(&model, &images, &PrepareOptions::new(CrossbarConfig::new(1, 1))).unwrap();
    let runs = run_batch(&net, &images, &Taps::All).unwrap();
    let report = build_report(&model, &runs, Some(&[0, 1, 2])).unwrap();
    assert_eq!(report.layers.len(), 4);
    for l in &report.layers {
        let rows: Vec<_> = report.rows_for(&l.layer).collect();
        let k = model.layer_index(&l.layer).unwrap();
        let [h, w, c] = model.layers[k].out_shape;
        assert_eq!(rows.len(), h * w * c * images.len());
        let errs: Vec<f64> = rows.iter().map(|r| r.rel_err).collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let worst = errs.iter().cloned().fold(0.0, f64::max);
        assert!((l.local.mean - mean).abs() <= 1e-12 * mean.max(1e-300));
        assert_eq!(l.local.worst, worst);
        assert_eq!(l.local.count, errs.len());
        let ideal: Vec<f64> = rows.iter().map(|r| r.ideal).collect();
        let range = ideal.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ideal.iter().cloned().fold(f64::INFINITY, f64::min);
        for r in &rows {
            assert!((r.rel_err - (r.actual - r.ideal).abs() / range).abs() <= 1e-15);
        }
        let recomputed = RelErrorStats::from_errors(&errs, range);
        assert_eq!(recomputed.histogram, l.local.histogram);
    }
    assert_eq!(report.classifications.len(), 3);
    assert_eq!(report.classifications[2].label, Some(2));
    let csv = report.to_csv();
    assert!(csv.starts_with("layer,window,column,ideal,actual,rel_err\n"));
    assert_eq!(csv.lines().count(), 1 + report.rows.len());
}

#[test]
fn tiny_network_with_8_bit_converters_stays_accurate() {
    let model = tiny_cnn([8, 8, 3], 10, 0).unwrap();
    let images = synthetic_images(8, [8, 8, 3], 0).unwrap();
    let net = AnalogNetwork::prepare(&model, &images[..4], &PrepareOptions::new(CrossbarConfig::new(1, 1))).unwrap();
    let sweep = quantization_sweep(&net, &images, None, &[BitSetting(Some(8))], &Taps::All).unwrap();
    let row = &sweep.rows[0];
    assert!(row.final_mean < 0.05, "{}", row.final_mean);
    let report = &sweep.reports[0];
    for l in &report.layers {
        assert!(l.end_to_end.mean < 0.05, "{}: {}", l.layer, l.end_to_end.mean);
    }
}

#[test]
fn ideal_sweep_keeps_software_accuracy_at_high_resolution() {
    let model = tiny_cnn([6, 6, 3], 4, 5).unwrap();
    let images = synthetic_images(10, [6, 6, 3], 8).unwrap();
    let labels: Vec<usize> = images
        .iter()
        .map(|im| {
            let p = software_forward(&model, im).unwrap();
            xbar_core::net::ops::argmax(&p.last().unwrap().data)
        })
        .collect();
    let net = AnalogNetwork::prepare(&model, &images, &ideal_options(0)).unwrap();
    let bits: Vec<BitSetting> = ["none", "14", "8"].iter().map(|b| b.parse().unwrap()).collect();
    let sweep = quantization_sweep(&net, &images, Some(&labels), &bits, &Taps::None).unwrap();
    assert_eq!(sweep.software_accuracy, Some(1.0));
    for r in &sweep.rows[..2] {
        assert_eq!(r.accuracy, sweep.software_accuracy, "{}", r.bits);
        assert_eq!(r.agreement, Some(1.0));
    }
    // Near-tied logits of a random model may flip at 8 bits.
    assert!(sweep.rows[2].agreement.unwrap() >= 0.8);
    assert!(sweep.rows[2].final_mean > sweep.rows[0].final_mean);
    let empty = quantization_sweep(&net, &[], None, &bits, &Taps::None).unwrap();
    assert!(empty.rows.is_empty());
}

#[test]
fn bit_settings_parse_and_validate() {
    assert_eq!("none".parse::<BitSetting>().unwrap(), BitSetting(None));
    assert_eq!(" 6 ".parse::<BitSetting>().unwrap(), BitSetting(Some(6)));
    assert!("0".parse::<BitSetting>().is_err());
    assert!("1".parse::<BitSetting>().is_err());
    assert!("eight".parse::<BitSetting>().is_err());
    assert_eq!(BitSetting(Some(4)).to_string(), "4");
}

#[test]
fn unknown_tap_is_rejected() {
    let model = tiny_cnn([4, 4, 1], 2, 1).unwrap();
    let images = synthetic_images(2, [4, 4, 1], 1).unwrap();
    let net = AnalogNetwork::prepare(&model, &images, &ideal_options(0)).unwrap();
    for taps in [Taps::Layers(vec!["Nope".into()]), Taps::Layers(vec!["ReLU0".into()])] {
        assert!(run_batch(&net, &images, &taps).is_err());
    }
}

#[test]
fn digital_op_examples() {
    let fm = FeatureMap::new(1, 1, 3, vec![-1.0, 2.0, 0.0]).unwrap();
    assert_eq!(relu(&fm).data, vec![0.0, 2.0, 0.0]);
    assert_eq!(batchnorm_affine(&fm, &[1.0; 3], &[0.0; 3]).unwrap().data, fm.data);
    let p = softmax(&[3.0; 4]);
    assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
    let big = softmax(&[1000.0, 1000.0]);
    assert_eq!(big, vec![0.5, 0.5]);
}

#[test]
fn analog_runs_are_independent_of_thread_count() {
    let model = residual_model(11);
    let images = synthetic_images(3, [6, 6, 4], 6).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            let mut opts = PrepareOptions::new(CrossbarConfig::new(1, 1));
            opts.build.seed = 3;
            let net = AnalogNetwork::prepare(&model, &images, &opts).unwrap();
            let sweep = quantization_sweep(&net, &images, None, &[BitSetting(None), BitSetting(Some(6))], &Taps::All).unwrap();
            sweep.reports.iter().map(|r| r.to_csv()).collect::<Vec<_>>()
        })
    };
    assert_eq!(run(1), run(4));
}
