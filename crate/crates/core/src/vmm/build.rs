//! Engine construction: map, pick a conversion signal, convert, range the
//! ADC and fit the calibration.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::calibrate::{fit_columns, CalibrationParams};
use super::convert::{convert, flat_signal, ConversionReport};
use super::mapping::{map_weights, WeightMapping};
use super::{ideal_shifted, EngineParts, VmmEngine};
use crate::circuit::{ConductanceMatrix, CrossbarConfig};
use crate::error::{Result, XbarError};
use crate::matrix::Matrix;
use crate::metrics::{rng, RelErrorStats};
use crate::quant::{adc_range_from_currents, AdcSpec, DacSpec};

/// Conversion-signal amplitudes tried by default, as fractions of `v_sense_max`.
pub const DEFAULT_AMPLITUDES: [f64; 7] = [1.0, 0.5, 0.2, 0.1, 0.05, 0.01, 0.001];
pub const DEFAULT_CALI_SAMPLES: usize = 10;
const DEFAULT_SIGNAL_SAMPLES: usize = 64;

/// Two mean errors closer than this are a tie.
const TIE_ABS: f64 = 1e-12;
const TIE_REL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConversionMode {
    /// No conversion: `G' = G`.
    Direct,
    /// Flat signal at a fixed fraction of `v_sense_max`.
    Fixed(f64),
    /// Search over flat-signal amplitudes.
    Optimized(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CalibrationMode {
    /// Nominal gain, no offset.
    Nominal,
    /// Fit on this many vectors drawn from the real input stream.
    Shuffled(usize),
    /// Fit on this many dense uniform random vectors.
    RandomSignal(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub conversion: ConversionMode,
    pub calibration: CalibrationMode,
    pub dac_bits: Option<u32>,
    pub adc_bits: Option<u32>,
    pub seed: u64,
    /// Input vectors used to score conversion signals and range the ADC.
    pub signal_samples: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            conversion: ConversionMode::Optimized(DEFAULT_AMPLITUDES.to_vec()),
            calibration: CalibrationMode::Shuffled(DEFAULT_CALI_SAMPLES),
            dac_bits: None,
            adc_bits: None,
            seed: 0,
            signal_samples: DEFAULT_SIGNAL_SAMPLES,
        }
    }
}

impl BuildOptions {
    /// Direct mapping without calibration.
    pub fn direct() -> Self {
        BuildOptions {
            conversion: ConversionMode::Direct,
            calibration: CalibrationMode::Nominal,
            ..Default::default()
        }
    }

    /// Conversion with the maximum input vector, no calibration.
    pub fn original_conversion() -> Self {
        BuildOptions {
            conversion: ConversionMode::Fixed(1.0),
            calibration: CalibrationMode::Nominal,
            ..Default::default()
        }
    }
}

/// Outcome of the conversion-signal search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSearch {
    /// Candidates in the order tried (descending amplitude).
    pub amplitudes: Vec<f64>,
    pub mean_errors: Vec<f64>,
    pub chosen: f64,
}

/// Draws up to `count` distinct vectors from `inputs` with a seeded RNG.
pub fn pick_samples(inputs: &[Vec<f64>], count: usize, seed: u64) -> Vec<Vec<f64>> {
    if inputs.len() <= count {
        return inputs.to_vec();
    }
    let mut r = rng(seed);
    let mut picked = index::sample(&mut r, inputs.len(), count).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|k| inputs[k].clone()).collect()
}

/// `count` dense vectors uniform in `[0, x_max]`.
pub fn random_signal_samples(len: usize, x_max: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| (0..len).map(|_| x_max * r.random::<f64>()).collect())
        .collect()
}

/// Fits per-column gain/offset so the engine's measured currents map onto
/// `xᵀ(A + shift)` for the calibration samples.
pub fn get_cali_para(engine: &VmmEngine, weights: &Matrix, samples: &[Vec<f64>]) -> Result<CalibrationParams> {
    if samples.len() < 2 {
        return Err(XbarError::contract(format!(
            "calibration needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let measured = samples
        .par_iter()
        .map(|x| engine.measured_currents(x))
        .collect::<Result<Vec<_>>>()?;
    let ideal: Vec<Vec<f64>> = samples
        .iter()
        .map(|x| ideal_shifted(weights, &engine.mapping, x))
        .collect();
    fit_columns(&measured, &ideal, engine.mapping.nominal_gain())
}

/// ADC range from the engine's analog column currents: `[0, 1.05·max]`.
pub fn calibrate_adc_range(engine: &VmmEngine, samples: &[Vec<f64>], bits: Option<u32>) -> Result<AdcSpec> {
    if samples.is_empty() {
        return Err(XbarError::contract("ADC range calibration needs at least one sample"));
    }
    let currents = samples
        .par_iter()
        .map(|x| engine.analog_currents(x))
        .collect::<Result<Vec<_>>>()?;
    adc_range_from_currents(bits, currents.iter().map(|c| c.as_slice()))
}

/// Relative-error statistics of `engine` against `xᵀA` over `inputs`.
/// The output range is that of the ideal outputs over the whole set.
pub fn evaluate(engine: &VmmEngine, weights: &Matrix, inputs: &[Vec<f64>]) -> Result<(RelErrorStats, Vec<f64>, Vec<f64>)> {
    let actual: Vec<Vec<f64>> = inputs
        .par_iter()
        .map(|x| engine.execute(x))
        .collect::<Result<Vec<_>>>()?;
    let ideal: Vec<f64> = inputs.iter().flat_map(|x| weights.vec_mul(x)).collect();
    let actual: Vec<f64> = actual.into_iter().flatten().collect();
    let stats = RelErrorStats::from_outputs(&actual, &ideal)?;
    Ok((stats, ideal, actual))
}

fn analog_engine(
    config: &CrossbarConfig,
    g_target: &ConductanceMatrix,
    g_converted: ConductanceMatrix,
    mapping: &WeightMapping,
    v_conv: Option<Vec<f64>>,
    conversion: Option<ConversionReport>,
    dac: Option<DacSpec>,
) -> Result<VmmEngine> {
    VmmEngine::from_parts(EngineParts {
        config: config.clone(),
        g_target: g_target.clone(),
        g_converted,
        mapping: mapping.clone(),
        v_conv,
        cali: CalibrationParams::nominal(mapping.weight_cols, mapping.nominal_gain()),
        dac,
        adc: None,
        conversion,
        signal_search: None,
    })
}

/// Scores each flat conversion signal by the mean relative error of the
/// converted and calibrated crossbar over `sample_inputs` and returns the
/// best. Ties go to the larger amplitude.
#[allow(clippy::too_many_arguments)]
pub fn optimize_conversion_signal(
    config: &CrossbarConfig,
    g_target: &ConductanceMatrix,
    mapping: &WeightMapping,
    weights: &Matrix,
    sample_inputs: &[Vec<f64>],
    amplitudes: &[f64],
    cali_samples: usize,
    seed: u64,
) -> Result<SignalSearch> {
    if sample_inputs.is_empty() {
        return Err(XbarError::contract("conversion-signal search needs sample inputs"));
    }
    if amplitudes.is_empty() {
        return Err(XbarError::contract("no conversion-signal candidates"));
    }
    let mut amps = amplitudes.to_vec();
    amps.sort_by(|a, b| b.total_cmp(a));
    amps.dedup();
    let cali = pick_samples(sample_inputs, cali_samples.max(2), seed);
    let mean_errors = amps
        .par_iter()
        .map(|&amp| {
            let v_conv = flat_signal(config, amp);
            let conv = convert(config, g_target, &v_conv)?;
            let engine = analog_engine(config, g_target, conv.g, mapping, Some(v_conv), Some(conv.report), None)?;
            let engine = engine.with_calibration(get_cali_para(&engine, weights, &cali)?)?;
            Ok(evaluate(&engine, weights, sample_inputs)?.0.mean)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut best = 0;
    for k in 1..amps.len() {
        let margin = TIE_ABS.max(TIE_REL * mean_errors[best]);
        if mean_errors[k] < mean_errors[best] - margin {
            best = k;
        }
    }
    Ok(SignalSearch {
        chosen: amps[best],
        amplitudes: amps,
        mean_errors,
    })
}

/// True when `a` beats `b` by more than the search's tie margin.
pub fn strictly_better(a: f64, b: f64) -> bool {
    a < b - TIE_ABS.max(TIE_REL * b)
}

/// Builds an engine for `weights` following the crossbar convolution flow:
/// dense-map, choose the conversion signal, convert, range the ADC on real
/// inputs, then calibrate on a random pick of the inputs.
pub fn build_engine(
    config: &CrossbarConfig,
    weights: &Matrix,
    x_max: f64,
    inputs: &[Vec<f64>],
    opts: &BuildOptions,
) -> Result<VmmEngine> {
    let analog = build_analog(config, weights, x_max, inputs, opts)?;
    finish_engine(&analog, weights, inputs, opts)
}

fn seeds(opts: &BuildOptions) -> (u64, u64) {
    (opts.seed ^ 0x5157_4e41_4c00, opts.seed ^ 0xca1_1b8a7e)
}

/// The mapped and converted crossbar, without quantizers or calibration.
pub fn build_analog(
    config: &CrossbarConfig,
    weights: &Matrix,
    x_max: f64,
    inputs: &[Vec<f64>],
    opts: &BuildOptions,
) -> Result<VmmEngine> {
    let (g_target, mapping) = map_weights(weights, config, x_max)?;
    if inputs.iter().any(|x| x.len() != weights.rows) {
        return Err(XbarError::contract("sample input length differs from weight rows"));
    }
    let (signal_seed, cali_seed) = seeds(opts);
    let (g_converted, v_conv, report, search) = match &opts.conversion {
        ConversionMode::Direct => (g_target.clone(), None, None, None),
        ConversionMode::Fixed(amp) => {
            let v = flat_signal(config, *amp);
            let c = convert(config, &g_target, &v)?;
            (c.g, Some(v), Some(c.report), None)
        }
        ConversionMode::Optimized(amps) => {
            let signal_set = pick_samples(inputs, opts.signal_samples, signal_seed);
            let cali_count = match opts.calibration {
                CalibrationMode::Shuffled(n) | CalibrationMode::RandomSignal(n) => n,
                CalibrationMode::Nominal => DEFAULT_CALI_SAMPLES,
            };
            let search = optimize_conversion_signal(
                config, &g_target, &mapping, weights, &signal_set, amps, cali_count, cali_seed,
            )?;
            let v = flat_signal(config, search.chosen);
            let c = convert(config, &g_target, &v)?;
            (c.g, Some(v), Some(c.report), Some(search))
        }
    };
    let mut engine = analog_engine(config, &g_target, g_converted, &mapping, v_conv, report, None)?;
    engine.signal_search = search;
    Ok(engine)
}

/// Adds the quantizers of `opts` to an analog engine, ranges the ADC and
/// fits the calibration. Any quantizers or calibration already on `analog`
/// are replaced.
pub fn finish_engine(analog: &VmmEngine, weights: &Matrix, inputs: &[Vec<f64>], opts: &BuildOptions) -> Result<VmmEngine> {
    let config = &analog.config;
    let (signal_seed, cali_seed) = seeds(opts);
    let dac = opts
        .dac_bits
        .map(|b| DacSpec::new(Some(b), config.v_sense_max))
        .transpose()?;
    let nominal = CalibrationParams::nominal(analog.output_len(), analog.mapping.nominal_gain());
    let mut engine = analog.with_quantizers(dac, None)?.with_calibration(nominal)?;
    if opts.adc_bits.is_some() {
        let signal_set = pick_samples(inputs, opts.signal_samples, signal_seed);
        let adc = calibrate_adc_range(&engine, &signal_set, opts.adc_bits)?;
        engine = engine.with_quantizers(dac, Some(adc))?;
    }

    let samples = match opts.calibration {
        CalibrationMode::Nominal => None,
        CalibrationMode::Shuffled(n) => Some(pick_samples(inputs, n, cali_seed)),
        CalibrationMode::RandomSignal(n) => Some(random_signal_samples(weights.rows, analog.mapping.x_max, n, cali_seed)),
    };
    if let Some(samples) = samples {
        let cali = get_cali_para(&engine, weights, &samples)?;
        engine = engine.with_calibration(cali)?;
    }
    Ok(engine)
}
