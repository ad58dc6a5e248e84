//! Single-layer accuracy experiments: engine variants and conversion-signal
//! amplitude sweeps on synthetic kernels and inputs.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::CrossbarConfig;
use crate::error::{Result, XbarError};
use crate::matrix::Matrix;
use crate::metrics::{bit_accuracy, gen_matrix, gen_values, KernelType, RelErrorStats, HISTOGRAM_EDGES};
use crate::vmm::{build_engine, evaluate, BuildOptions, CalibrationMode, ConversionMode, DEFAULT_AMPLITUDES, DEFAULT_CALI_SAMPLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Direct mapping, nominal gain.
    Direct,
    /// Direct mapping with calibration.
    DirectCalibrated,
    /// Conversion with the full-scale signal, nominal gain.
    Original,
    /// Searched conversion signal, nominal gain.
    Uncalibrated,
    /// Searched conversion signal plus calibration on shuffled inputs.
    Improved,
    /// Searched conversion signal plus calibration on random signals.
    RandomCalibration,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Direct,
        Variant::DirectCalibrated,
        Variant::Original,
        Variant::Uncalibrated,
        Variant::Improved,
        Variant::RandomCalibration,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Direct => "direct",
            Variant::DirectCalibrated => "direct-calibrated",
            Variant::Original => "original",
            Variant::Uncalibrated => "uncalibrated",
            Variant::Improved => "improved",
            Variant::RandomCalibration => "random-calibration",
        }
    }

    /// Build options for this variant, on top of `base` (bits, seed, sample counts).
    pub fn options(&self, base: &BuildOptions) -> BuildOptions {
        let amps = match &base.conversion {
            ConversionMode::Optimized(a) => a.clone(),
            _ => DEFAULT_AMPLITUDES.to_vec(),
        };
        let cali = match base.calibration {
            CalibrationMode::Shuffled(n) | CalibrationMode::RandomSignal(n) => n,
            CalibrationMode::Nominal => DEFAULT_CALI_SAMPLES,
        };
        let (conversion, calibration) = match self {
            Variant::Direct => (ConversionMode::Direct, CalibrationMode::Nominal),
            Variant::DirectCalibrated => (ConversionMode::Direct, CalibrationMode::Shuffled(cali)),
            Variant::Original => (ConversionMode::Fixed(1.0), CalibrationMode::Nominal),
            Variant::Uncalibrated => (ConversionMode::Optimized(amps), CalibrationMode::Nominal),
            Variant::Improved => (ConversionMode::Optimized(amps), CalibrationMode::Shuffled(cali)),
            Variant::RandomCalibration => (ConversionMode::Optimized(amps), CalibrationMode::RandomSignal(cali)),
        };
        BuildOptions {
            conversion,
            calibration,
            ..base.clone()
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = XbarError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| XbarError::config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerExperiment {
    pub kernel_type: KernelType,
    pub rows: usize,
    pub cols: usize,
    pub sparsities: Vec<f64>,
    /// Input vectors per sparsity.
    pub eval_samples: usize,
    /// Physical parameters; resized to `rows × cols`.
    pub config: CrossbarConfig,
    /// Seed, bit widths and sample counts shared by all variants.
    pub build: BuildOptions,
    pub variants: Vec<Variant>,
    /// Also sweep fixed conversion-signal amplitudes (each calibrated).
    pub amplitudes: Option<Vec<f64>>,
    pub seed: u64,
}

impl LayerExperiment {
    pub fn new(kernel_type: KernelType, rows: usize, cols: usize) -> Self {
        LayerExperiment {
            kernel_type,
            rows,
            cols,
            sparsities: vec![0.5],
            eval_samples: 200,
            config: CrossbarConfig::new(rows, cols),
            build: BuildOptions::default(),
            variants: Variant::ALL.to_vec(),
            amplitudes: None,
            seed: 0,
        }
    }

    pub fn weights(&self) -> Result<Matrix> {
        Matrix::new(self.rows, self.cols, gen_matrix(self.kernel_type, self.rows, self.cols, self.seed))
    }

    /// Evaluation inputs at one sparsity, values in `[0, 1]`.
    pub fn inputs(&self, sparsity: f64) -> Result<Vec<Vec<f64>>> {
        let base = self.seed.wrapping_mul(1_000_003).wrapping_add((sparsity * 1e6).round() as u64);
        (0..self.eval_samples)
            .map(|k| gen_values(self.rows, sparsity, base.wrapping_mul(65_537).wrapping_add(k as u64)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: Variant,
    pub sparsity: f64,
    pub stats: RelErrorStats,
    /// Conversion-signal amplitude in use, as a fraction of `v_sense_max`.
    pub amplitude: Option<f64>,
    pub converged: Option<bool>,
    pub saturated: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeRow {
    pub amplitude: f64,
    pub sparsity: f64,
    pub stats: RelErrorStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerExpResult {
    pub variants: Vec<VariantRow>,
    pub amplitudes: Vec<AmplitudeRow>,
}

pub fn run_layer_experiment(exp: &LayerExperiment) -> Result<LayerExpResult> {
    if exp.eval_samples < 2 {
        return Err(XbarError::config("layer experiment needs at least 2 evaluation samples"));
    }
    let config = exp.config.with_size(exp.rows, exp.cols);
    config.validate()?;
    let weights = exp.weights()?;
    let mut variants = Vec::new();
    let mut amplitudes = Vec::new();
    for &s in &exp.sparsities {
        let inputs = exp.inputs(s)?;
        let rows = exp
            .variants
            .par_iter()
            .map(|v| {
                let e = build_engine(&config, &weights, 1.0, &inputs, &v.options(&exp.build))?;
                let (stats, _, _) = evaluate(&e, &weights, &inputs)?;
                let amplitude = e
                    .v_conv
                    .as_ref()
                    .map(|v| v[0] / config.v_sense_max);
                Ok(VariantRow {
                    variant: *v,
                    sparsity: s,
                    stats,
                    amplitude,
                    converged: e.conversion.as_ref().map(|c| c.converged),
                    saturated: e.conversion.as_ref().map(|c| c.saturated_total()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        variants.extend(rows);
        if let Some(amps) = &exp.amplitudes {
            let rows = amps
                .par_iter()
                .map(|&a| {
                    let opts = BuildOptions {
                        conversion: ConversionMode::Fixed(a),
                        ..Variant::Improved.options(&exp.build)
                    };
                    let e = build_engine(&config, &weights, 1.0, &inputs, &opts)?;
                    Ok(AmplitudeRow {
                        amplitude: a,
                        sparsity: s,
                        stats: evaluate(&e, &weights, &inputs)?.0,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            amplitudes.extend(rows);
        }
    }
    Ok(LayerExpResult { variants, amplitudes })
}

fn bits_cell(e: f64) -> String {
    bit_accuracy(e).to_string()
}

impl LayerExpResult {
    pub fn variants_csv(&self) -> String {
        let mut s = String::from("variant,sparsity,mean,worst,bits_mean,bits_worst,output_range,count,amplitude,converged,saturated\n");
        for r in &self.variants {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.variant.name(),
                r.sparsity,
                r.stats.mean,
                r.stats.worst,
                bits_cell(r.stats.mean),
                bits_cell(r.stats.worst),
                r.stats.output_range,
                r.stats.count,
                r.amplitude.map(|a| a.to_string()).unwrap_or_default(),
                r.converged.map(|c| c.to_string()).unwrap_or_default(),
                r.saturated.map(|c| c.to_string()).unwrap_or_default(),
            );
        }
        s
    }

    pub fn amplitudes_csv(&self) -> String {
        let mut s = String::from("amplitude,sparsity,mean,worst,bits_mean,bits_worst\n");
        for r in &self.amplitudes {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.amplitude,
                r.sparsity,
                r.stats.mean,
                r.stats.worst,
                bits_cell(r.stats.mean),
                bits_cell(r.stats.worst)
            );
        }
        s
    }

    /// Error histograms of every variant, one row per bin.
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("variant,sparsity,bin_lower,count\n");
        for r in &self.variants {
            for (edge, n) in HISTOGRAM_EDGES.iter().zip(&r.stats.histogram) {
                let _ = writeln!(s, "{},{},{},{}", r.variant.name(), r.sparsity, edge, n);
            }
        }
        s
    }

    pub fn find(&self, variant: Variant, sparsity: f64) -> Option<&VariantRow> {
        self.variants.iter().find(|r| r.variant == variant && r.sparsity == sparsity)
    }
}
