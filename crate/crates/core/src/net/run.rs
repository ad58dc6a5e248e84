//! Network inference on crossbars and the error-propagation experiments.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{LayerOp, NetworkModel};
use super::ops::{argmax, batchnorm_affine, global_avg_pool, relu, shortcut_add, softmax};
use crate::circuit::CrossbarConfig;
use crate::conv::{conv_exact, conv_execute, unroll_kernel, window_stream, FeatureMap};
use crate::error::{Result, XbarError};
use crate::matrix::Matrix;
use crate::metrics::RelErrorStats;
use crate::quant::ClipCounter;
use crate::report::{Classification, ErrorReport, ErrorRow, LayerAggregate};
use crate::vmm::{build_analog, finish_engine, pick_samples, BuildOptions, VmmEngine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Exact arithmetic everywhere.
    Software,
    /// Convolutions and FC layers on crossbar engines.
    Analog,
}

/// DAC and ADC bit width; `None` leaves both analog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitSetting(pub Option<u32>);

impl fmt::Display for BitSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(b) => write!(f, "{b}"),
            None => f.write_str("none"),
        }
    }
}

impl FromStr for BitSetting {
    type Err = XbarError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") {
            return Ok(BitSetting(None));
        }
        let b: u32 = s
            .parse()
            .map_err(|_| XbarError::config(format!("bit width must be an integer or 'none', got {s:?}")))?;
        crate::quant::DacSpec::new(Some(b), 1.0)?;
        Ok(BitSetting(Some(b)))
    }
}

/// Which layers report errors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Taps {
    None,
    /// Every crossbar layer.
    All,
    Layers(Vec<String>),
}

impl Taps {
    fn resolve(&self, model: &NetworkModel) -> Result<Vec<bool>> {
        let mut on = vec![false; model.layers.len()];
        match self {
            Taps::None => {}
            Taps::All => {
                for k in model.crossbar_layers() {
                    on[k] = true;
                }
            }
            Taps::Layers(names) => {
                for n in names {
                    let k = model
                        .layer_index(n)
                        .filter(|&k| model.layers[k].op.crossbar_spec().is_some())
                        .ok_or_else(|| XbarError::config(format!("no crossbar layer named {n}")))?;
                    on[k] = true;
                }
            }
        }
        Ok(on)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    /// Physical parameters; each layer gets a crossbar sized to its kernel.
    pub config: CrossbarConfig,
    pub build: BuildOptions,
    /// Window vectors kept per layer for signal search and calibration.
    pub max_samples: usize,
}

impl PrepareOptions {
    pub fn new(config: CrossbarConfig) -> Self {
        PrepareOptions {
            config,
            build: BuildOptions::default(),
            max_samples: 4096,
        }
    }
}

/// One crossbar layer's engines.
#[derive(Debug, Clone)]
pub struct LayerEngine {
    pub weights: Matrix,
    /// Converted crossbar without quantizers or calibration.
    pub analog: VmmEngine,
    /// The engine inference runs on.
    pub engine: VmmEngine,
    samples: Vec<Vec<f64>>,
    build: BuildOptions,
}

/// A model with an engine for every crossbar layer.
#[derive(Debug, Clone)]
pub struct AnalogNetwork {
    pub model: NetworkModel,
    /// Indexed like `model.layers`; `None` for digital layers.
    pub engines: Vec<Option<LayerEngine>>,
    pub bits: BitSetting,
}

fn layer_seed(seed: u64, layer: usize) -> u64 {
    seed.wrapping_add((layer as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

impl AnalogNetwork {
    /// Maps, converts and calibrates every crossbar layer. Input ranges and
    /// calibration samples come from the layer inputs of a digital pass over
    /// `calibration_images`.
    pub fn prepare(model: &NetworkModel, calibration_images: &[FeatureMap], opts: &PrepareOptions) -> Result<Self> {
        if calibration_images.is_empty() {
            return Err(XbarError::contract("engine preparation needs at least one calibration image"));
        }
        let passes = calibration_images
            .par_iter()
            .map(|im| software_forward(model, im))
            .collect::<Result<Vec<_>>>()?;
        let bits = BitSetting(opts.build.dac_bits.or(opts.build.adc_bits));

        let crossbar = model.crossbar_layers();
        let built = crossbar
            .par_iter()
            .map(|&k| {
                let layer = &model.layers[k];
                let spec = layer.op.crossbar_spec().expect("crossbar layer");
                let src = layer.inputs[0];
                let mut windows = Vec::new();
                for acts in &passes {
                    windows.extend(window_stream(&acts[src], &spec.shape)?);
                }
                let x_max = windows.iter().flatten().copied().fold(0.0f64, f64::max);
                let x_max = if x_max > 0.0 { x_max } else { 1.0 };
                let mut build = opts.build.clone();
                build.seed = layer_seed(opts.build.seed, k);
                let samples = pick_samples(&windows, opts.max_samples, build.seed);
                let weights = unroll_kernel(spec);
                let config = opts.config.with_size(weights.rows, weights.cols);
                let analog = build_analog(&config, &weights, x_max, &samples, &build)?;
                let engine = finish_engine(&analog, &weights, &samples, &build)?;
                Ok((
                    k,
                    LayerEngine {
                        weights,
                        analog,
                        engine,
                        samples,
                        build,
                    },
                ))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut engines: Vec<Option<LayerEngine>> = vec![None; model.layers.len()];
        for (k, e) in built {
            engines[k] = Some(e);
        }
        Ok(AnalogNetwork {
            model: model.clone(),
            engines,
            bits,
        })
    }

    /// Same conversion, new DAC/ADC width; ADC ranges and calibration are refit.
    pub fn with_bits(&self, bits: BitSetting) -> Result<Self> {
        let engines = self
            .engines
            .par_iter()
            .map(|e| {
                e.as_ref()
                    .map(|e| {
                        let build = BuildOptions {
                            dac_bits: bits.0,
                            adc_bits: bits.0,
                            ..e.build.clone()
                        };
                        let engine = finish_engine(&e.analog, &e.weights, &e.samples, &build)?;
                        Ok(LayerEngine {
                            engine,
                            build,
                            ..e.clone()
                        })
                    })
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AnalogNetwork {
            model: self.model.clone(),
            engines,
            bits,
        })
    }

    pub fn engine(&self, layer: &str) -> Option<&VmmEngine> {
        self.model
            .layer_index(layer)
            .and_then(|k| self.engines[k].as_ref())
            .map(|e| &e.engine)
    }
}

fn check_image(model: &NetworkModel, image: &FeatureMap) -> Result<()> {
    if image.shape() != model.input_shape() {
        return Err(XbarError::contract(format!(
            "image is {:?}, model expects {:?}",
            image.shape(),
            model.input_shape()
        )));
    }
    if image.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(XbarError::contract("image values must be normalized to [0, 1]"));
    }
    Ok(())
}

fn digital(op: &LayerOp, ins: &[&FeatureMap]) -> Result<FeatureMap> {
    match op {
        LayerOp::Relu => Ok(relu(ins[0])),
        LayerOp::BatchNorm { scale, bias } => batchnorm_affine(ins[0], scale, bias),
        LayerOp::GlobalAvgPool => global_avg_pool(ins[0]),
        LayerOp::Add => shortcut_add(ins[0], ins[1]),
        LayerOp::Softmax => {
            let p = softmax(&ins[0].data);
            FeatureMap::new(ins[0].height, ins[0].width, ins[0].channels, p)
        }
        LayerOp::Input { .. } | LayerOp::Conv { .. } | LayerOp::Fc { .. } => {
            unreachable!("not a digital layer")
        }
    }
}

/// Every layer's output on the exact path.
pub fn software_forward(model: &NetworkModel, image: &FeatureMap) -> Result<Vec<FeatureMap>> {
    check_image(model, image)?;
    let mut acts: Vec<FeatureMap> = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let out = match &layer.op {
            LayerOp::Input { .. } => image.clone(),
            LayerOp::Conv { spec, .. } | LayerOp::Fc { spec } => conv_exact(&acts[layer.inputs[0]], spec)?,
            op => {
                let ins: Vec<&FeatureMap> = layer.inputs.iter().map(|&i| &acts[i]).collect();
                digital(op, &ins)?
            }
        };
        acts.push(out);
    }
    Ok(acts)
}

/// Outputs of one tapped crossbar layer for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub layer: usize,
    pub cols: usize,
    pub actual: Vec<f64>,
    /// Exact product of the same (analog-produced) input.
    pub local_ideal: Vec<f64>,
    /// Output of the fully digital network.
    pub software: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub probs: Vec<f64>,
    pub class: usize,
    pub software_class: usize,
    pub traces: Vec<LayerTrace>,
    /// Crossbar inputs above the engine's range, clipped.
    pub input_clips: u64,
}

fn analog_forward(net: &AnalogNetwork, image: &FeatureMap, taps: &[bool]) -> Result<Inference> {
    let model = &net.model;
    let soft = software_forward(model, image)?;
    let clips = ClipCounter::new();
    let mut acts: Vec<FeatureMap> = Vec::with_capacity(model.layers.len());
    let mut traces = Vec::new();
    for (k, layer) in model.layers.iter().enumerate() {
        let out = match &layer.op {
            LayerOp::Input { .. } => image.clone(),
            LayerOp::Conv { spec, .. } | LayerOp::Fc { spec } => {
                let input = &acts[layer.inputs[0]];
                let engine = &net.engines[k].as_ref().expect("engine for every crossbar layer").engine;
                if !input.is_non_negative() {
                    return Err(XbarError::contract(format!(
                        "crossbar layer {} received negative inputs",
                        layer.name
                    )));
                }
                let x_max = engine.mapping.x_max;
                let mut clamped = input.clone();
                for v in clamped.data.iter_mut() {
                    if *v > x_max {
                        clips.record();
                        *v = x_max;
                    }
                }
                let out = conv_execute(engine, &clamped, spec, None)?.output;
                if taps[k] {
                    traces.push(LayerTrace {
                        layer: k,
                        cols: spec.shape.out_channels,
                        actual: out.data.clone(),
                        local_ideal: conv_exact(input, spec)?.data,
                        software: soft[k].data.clone(),
                    });
                }
                out
            }
            op => {
                let ins: Vec<&FeatureMap> = layer.inputs.iter().map(|&i| &acts[i]).collect();
                digital(op, &ins)?
            }
        };
        acts.push(out);
    }
    let probs = acts.pop().expect("non-empty model").data;
    let software = &soft.last().expect("non-empty model").data;
    Ok(Inference {
        class: argmax(&probs),
        software_class: argmax(software),
        probs,
        traces,
        input_clips: clips.get(),
    })
}

/// Classifies one image.
///
/// In analog mode the report carries, for each tapped layer, error rows
/// against the exact product of the same analog-produced layer input, and
/// aggregates both for that local error and against the digital network.
pub fn run_inference(net: &AnalogNetwork, image: &FeatureMap, mode: Mode, taps: &Taps) -> Result<(Vec<f64>, ErrorReport)> {
    match mode {
        Mode::Software => {
            let acts = software_forward(&net.model, image)?;
            Ok((acts.last().expect("non-empty model").data.clone(), ErrorReport::default()))
        }
        Mode::Analog => {
            let inf = analog_forward(net, image, &taps.resolve(&net.model)?)?;
            let report = build_report(&net.model, std::slice::from_ref(&inf), None)?;
            Ok((inf.probs, report))
        }
    }
}

/// Analog inference over many images, images in parallel.
pub fn run_batch(net: &AnalogNetwork, images: &[FeatureMap], taps: &Taps) -> Result<Vec<Inference>> {
    let on = taps.resolve(&net.model)?;
    images.par_iter().map(|im| analog_forward(net, im, &on)).collect()
}

/// Combines per-image traces into one report. Relative errors use each
/// layer's ideal output range over all images.
pub fn build_report(model: &NetworkModel, runs: &[Inference], labels: Option<&[usize]>) -> Result<ErrorReport> {
    let mut report = ErrorReport::default();
    let mut tapped: Vec<usize> = runs.iter().flat_map(|r| r.traces.iter().map(|t| t.layer)).collect();
    tapped.sort_unstable();
    tapped.dedup();
    for k in tapped {
        let name = &model.layers[k].name;
        let (mut actual, mut local, mut soft) = (Vec::new(), Vec::new(), Vec::new());
        let mut cols = 1;
        for t in runs.iter().flat_map(|r| r.traces.iter()).filter(|t| t.layer == k) {
            actual.extend_from_slice(&t.actual);
            local.extend_from_slice(&t.local_ideal);
            soft.extend_from_slice(&t.software);
            cols = t.cols;
        }
        let rows = ErrorRow::for_layer(name, &actual, &local, cols)?;
        let errors: Vec<f64> = rows.iter().map(|r| r.rel_err).collect();
        let local_stats = RelErrorStats::from_errors(&errors, crate::metrics::output_range(&local));
        report.layers.push(LayerAggregate {
            layer: name.clone(),
            local: local_stats,
            end_to_end: RelErrorStats::from_outputs(&actual, &soft)?,
        });
        report.rows.extend(rows);
    }
    report.classifications = runs
        .iter()
        .enumerate()
        .map(|(i, r)| Classification {
            image: i,
            predicted: r.class,
            software: r.software_class,
            label: labels.and_then(|l| l.get(i).copied()),
        })
        .collect();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bits: String,
    pub images: usize,
    /// Against labels, when given.
    pub accuracy: Option<f64>,
    /// Analog class equals digital class.
    pub agreement: Option<f64>,
    pub final_layer: String,
    pub final_mean: f64,
    pub final_worst: f64,
    pub final_local_mean: f64,
    pub input_clips: u64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub reports: Vec<ErrorReport>,
    pub software_accuracy: Option<f64>,
}

/// Runs every image at every bit setting. The last crossbar layer is always
/// tapped, since its error is the headline number of each setting.
pub fn quantization_sweep(
    net: &AnalogNetwork,
    images: &[FeatureMap],
    labels: Option<&[usize]>,
    bits: &[BitSetting],
    taps: &Taps,
) -> Result<SweepResult> {
    if let Some(l) = labels {
        if l.len() != images.len() {
            return Err(XbarError::contract(format!(
                "{} labels for {} images",
                l.len(),
                images.len()
            )));
        }
    }
    let last = *net
        .model
        .crossbar_layers()
        .last()
        .ok_or_else(|| XbarError::contract("model has no crossbar layers"))?;
    let last_name = net.model.layers[last].name.clone();
    let mut taps_on = taps.resolve(&net.model)?;
    taps_on[last] = true;

    let software_accuracy = match labels {
        Some(l) if !images.is_empty() => {
            let classes = images
                .par_iter()
                .map(|im| software_forward(&net.model, im).map(|a| argmax(&a.last().expect("non-empty").data)))
                .collect::<Result<Vec<_>>>()?;
            Some(classes.iter().zip(l).filter(|(c, l)| c == l).count() as f64 / images.len() as f64)
        }
        _ => None,
    };

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    if images.is_empty() {
        return Ok(SweepResult {
            rows,
            reports,
            software_accuracy,
        });
    }
    for &b in bits {
        let nb = net.with_bits(b)?;
        let runs = images
            .par_iter()
            .map(|im| analog_forward(&nb, im, &taps_on))
            .collect::<Result<Vec<_>>>()?;
        let report = build_report(&nb.model, &runs, labels)?;
        let fin = report.layer(&last_name).expect("last layer tapped");
        rows.push(SweepRow {
            bits: b.to_string(),
            images: images.len(),
            accuracy: report.accuracy(),
            agreement: report.agreement(),
            final_layer: last_name.clone(),
            final_mean: fin.end_to_end.mean,
            final_worst: fin.end_to_end.worst,
            final_local_mean: fin.local.mean,
            input_clips: runs.iter().map(|r| r.input_clips).sum(),
        });
        reports.push(report);
    }
    Ok(SweepResult {
        rows,
        reports,
        software_accuracy,
    })
}
