use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use xbar_core::circuit::{DEFAULT_R_OFF, DEFAULT_R_ON, DEFAULT_R_TERMINAL, DEFAULT_R_WIRE, DEFAULT_V_SENSE};
use xbar_core::vmm::{BuildOptions, CalibrationMode, ConversionMode, DEFAULT_AMPLITUDES, DEFAULT_CALI_SAMPLES};
use xbar_core::{CrossbarConfig, DacSpec, XbarError};

pub const SCHEMA: &str = include_str!("../../../schemas/experiment-config.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Physical {
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub g_min: f64,
    pub g_max: f64,
    pub r_wire: f64,
    pub r_in: f64,
    pub r_out: f64,
    pub r_transistor_on: f64,
    pub v_sense_max: f64,
}

impl Default for Physical {
    fn default() -> Self {
        Physical {
            rows: None,
            cols: None,
            g_min: 1.0 / DEFAULT_R_OFF,
            g_max: 1.0 / DEFAULT_R_ON,
            r_wire: DEFAULT_R_WIRE,
            r_in: DEFAULT_R_TERMINAL,
            r_out: DEFAULT_R_TERMINAL,
            r_transistor_on: 0.0,
            v_sense_max: DEFAULT_V_SENSE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub crossbar: Physical,
    pub dac_bits: Option<u32>,
    pub adc_bits: Option<u32>,
    pub amplitudes: Vec<f64>,
    pub calibration_samples: usize,
    pub signal_samples: usize,
    pub eval_samples: usize,
    pub calibration_images: usize,
    pub max_layer_samples: usize,
    pub seed: u64,
    pub x_max: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            crossbar: Physical::default(),
            dac_bits: None,
            adc_bits: None,
            amplitudes: DEFAULT_AMPLITUDES.to_vec(),
            calibration_samples: DEFAULT_CALI_SAMPLES,
            signal_samples: 64,
            eval_samples: 200,
            calibration_images: 4,
            max_layer_samples: 4096,
            seed: 0,
            x_max: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let cfg = match path {
            None => ExperimentConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .map_err(|e| XbarError::InvalidConfig(format!("{}: {e}", p.display())))?
            }
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), XbarError> {
        self.crossbar_config(1, 1).validate()?;
        for b in [self.dac_bits, self.adc_bits].into_iter().flatten() {
            DacSpec::new(Some(b), 1.0)?;
        }
        if self.amplitudes.is_empty() || self.amplitudes.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(XbarError::InvalidConfig("amplitudes must be non-empty and lie in (0, 1]".into()));
        }
        if self.calibration_samples < 2 {
            return Err(XbarError::InvalidConfig("calibration_samples must be at least 2".into()));
        }
        if self.signal_samples == 0 || self.eval_samples < 2 || self.calibration_images == 0 || self.max_layer_samples < 2 {
            return Err(XbarError::InvalidConfig("sample counts are too small".into()));
        }
        if matches!(self.x_max, Some(x) if !(x > 0.0 && x.is_finite())) {
            return Err(XbarError::InvalidConfig("x_max must be positive".into()));
        }
        if self.crossbar.rows == Some(0) || self.crossbar.cols == Some(0) {
            return Err(XbarError::InvalidConfig("crossbar rows/cols must be positive".into()));
        }
        Ok(())
    }

    pub fn crossbar_config(&self, rows: usize, cols: usize) -> CrossbarConfig {
        let p = &self.crossbar;
        CrossbarConfig {
            rows,
            cols,
            g_min: p.g_min,
            g_max: p.g_max,
            r_wire: p.r_wire,
            r_in: p.r_in,
            r_out: p.r_out,
            r_transistor_on: p.r_transistor_on,
            v_sense_max: p.v_sense_max,
        }
    }

    /// A crossbar for a `rows × cols` weight matrix: the configured size
    /// when one is set (the weights must fit), else exactly the weights.
    pub fn crossbar_for(&self, rows: usize, cols: usize) -> Result<CrossbarConfig, XbarError> {
        let r = self.crossbar.rows.unwrap_or(rows);
        let c = self.crossbar.cols.unwrap_or(cols);
        if rows > r || cols > c {
            return Err(XbarError::Contract(format!(
                "{rows}x{cols} weights do not fit a {r}x{c} crossbar"
            )));
        }
        Ok(self.crossbar_config(r, c))
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            conversion: ConversionMode::Optimized(self.amplitudes.clone()),
            calibration: CalibrationMode::Shuffled(self.calibration_samples),
            dac_bits: self.dac_bits,
            adc_bits: self.adc_bits,
            seed: self.seed,
            signal_samples: self.signal_samples,
        }
    }
}
