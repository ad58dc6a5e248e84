//! Crossbar VMM engines: weight mapping, conversion, conversion-signal
//! search, calibration and calibrated execution of `Y = X·A`.

mod build;
mod calibrate;
mod convert;
mod io;
mod mapping;

pub use build::{
    build_analog, build_engine, calibrate_adc_range, finish_engine, evaluate, get_cali_para, optimize_conversion_signal, pick_samples,
    random_signal_samples, strictly_better, BuildOptions, CalibrationMode, ConversionMode, SignalSearch, DEFAULT_AMPLITUDES,
    DEFAULT_CALI_SAMPLES,
};
pub use calibrate::{fit_columns, CalibrationParams};
pub use convert::{convert, flat_signal, Conversion, ConversionReport, CONVERSION_MAX_ITERATIONS, CONVERSION_TOLERANCE};
pub(crate) use io::sha256_hex;
pub use io::{load_engine, save_engine, EngineDescriptor, ENGINE_FORMAT, ENGINE_VERSION};
pub use mapping::{map_weights, WeightMapping};

use std::sync::Arc;

use crate::circuit::{ConductanceMatrix, CrossbarConfig, CrossbarSolver};
use crate::error::{Result, XbarError};
use crate::matrix::Matrix;
use crate::quant::{adc_quantize, dac_quantize, AdcSpec, ClipCounter, DacSpec};

/// A mapped, converted and calibrated crossbar computing `y = xᵀA`.
///
/// Immutable once built; [`VmmEngine::execute`] can be called from many
/// threads at once.
#[derive(Debug, Clone)]
pub struct VmmEngine {
    pub config: CrossbarConfig,
    pub g_target: ConductanceMatrix,
    pub g_converted: ConductanceMatrix,
    pub mapping: WeightMapping,
    /// Conversion signal; `None` when the engine uses the direct mapping.
    pub v_conv: Option<Vec<f64>>,
    pub cali: CalibrationParams,
    pub dac: Option<DacSpec>,
    pub adc: Option<AdcSpec>,
    pub conversion: Option<ConversionReport>,
    pub signal_search: Option<SignalSearch>,
    solver: Arc<CrossbarSolver>,
    clips: Arc<Clips>,
}

#[derive(Debug, Default)]
struct Clips {
    dac: ClipCounter,
    adc: ClipCounter,
}

/// Everything but the factored network, for assembling an engine.
#[derive(Debug, Clone)]
pub struct EngineParts {
    pub config: CrossbarConfig,
    pub g_target: ConductanceMatrix,
    pub g_converted: ConductanceMatrix,
    pub mapping: WeightMapping,
    pub v_conv: Option<Vec<f64>>,
    pub cali: CalibrationParams,
    pub dac: Option<DacSpec>,
    pub adc: Option<AdcSpec>,
    pub conversion: Option<ConversionReport>,
    pub signal_search: Option<SignalSearch>,
}

impl VmmEngine {
    pub fn from_parts(p: EngineParts) -> Result<Self> {
        p.config.validate()?;
        p.g_target.check_against(&p.config)?;
        p.g_converted.check_against(&p.config)?;
        if let Some(v) = &p.v_conv {
            if v.len() != p.config.rows {
                return Err(XbarError::contract("conversion signal length differs from crossbar rows"));
            }
        }
        let cols = p.mapping.weight_cols;
        if p.cali.gain.len() != cols || p.cali.offset.len() != cols {
            return Err(XbarError::contract("calibration width differs from weight columns"));
        }
        if p.cali.gain.iter().any(|g| !g.is_finite() || *g == 0.0) {
            return Err(XbarError::contract("calibration gains must be finite and nonzero"));
        }
        if let Some(d) = &p.dac {
            d.validate()?;
        }
        if let Some(a) = &p.adc {
            a.validate()?;
        }
        let solver = Arc::new(CrossbarSolver::new(&p.config, &p.g_converted)?);
        Ok(VmmEngine {
            config: p.config,
            g_target: p.g_target,
            g_converted: p.g_converted,
            mapping: p.mapping,
            v_conv: p.v_conv,
            cali: p.cali,
            dac: p.dac,
            adc: p.adc,
            conversion: p.conversion,
            signal_search: p.signal_search,
            solver,
            clips: Arc::new(Clips::default()),
        })
    }

    pub fn parts(&self) -> EngineParts {
        EngineParts {
            config: self.config.clone(),
            g_target: self.g_target.clone(),
            g_converted: self.g_converted.clone(),
            mapping: self.mapping.clone(),
            v_conv: self.v_conv.clone(),
            cali: self.cali.clone(),
            dac: self.dac,
            adc: self.adc,
            conversion: self.conversion.clone(),
            signal_search: self.signal_search.clone(),
        }
    }

    pub fn input_len(&self) -> usize {
        self.mapping.weight_rows
    }

    pub fn output_len(&self) -> usize {
        self.mapping.weight_cols
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(XbarError::contract(format!(
                "input has {} entries, engine expects {}",
                x.len(),
                self.input_len()
            )));
        }
        let limit = self.mapping.x_max * (1.0 + 1e-12);
        if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && **v <= limit)) {
            return Err(XbarError::contract(format!(
                "input {v} at position {i} outside [0, {}]",
                self.mapping.x_max
            )));
        }
        Ok(())
    }

    /// Row voltages after the DAC, padded to the crossbar height.
    fn drive(&self, x: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.config.rows];
        for (vi, &xi) in v.iter_mut().zip(x) {
            let raw = (self.mapping.alpha * xi).min(self.config.v_sense_max);
            *vi = match &self.dac {
                Some(d) => dac_quantize(raw, d, Some(&self.clips.dac)),
                None => raw,
            };
        }
        v
    }

    /// Column currents before the ADC for the used columns.
    pub fn analog_currents(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut i = self.solver.output_currents(&self.drive(x))?;
        i.truncate(self.output_len());
        Ok(i)
    }

    /// Column currents as the ADC reports them.
    pub fn measured_currents(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut i = self.analog_currents(x)?;
        if let Some(adc) = &self.adc {
            for v in i.iter_mut() {
                *v = adc_quantize(*v, adc, Some(&self.clips.adc));
            }
        }
        Ok(i)
    }

    /// Calibrated `xᵀA`.
    pub fn execute(&self, x: &[f64]) -> Result<Vec<f64>> {
        let currents = self.measured_currents(x)?;
        let shift = self.mapping.total_shift() * x.iter().sum::<f64>();
        Ok(currents
            .iter()
            .enumerate()
            .map(|(j, &i)| self.cali.apply(j, i) - shift)
            .collect())
    }

    pub fn dac_clips(&self) -> u64 {
        self.clips.dac.get()
    }

    pub fn adc_clips(&self) -> u64 {
        self.clips.adc.get()
    }

    /// Same engine with different quantizers (the calibration is kept).
    pub fn with_quantizers(&self, dac: Option<DacSpec>, adc: Option<AdcSpec>) -> Result<Self> {
        if let Some(d) = &dac {
            d.validate()?;
        }
        if let Some(a) = &adc {
            a.validate()?;
        }
        Ok(VmmEngine {
            dac,
            adc,
            clips: Arc::new(Clips::default()),
            ..self.clone()
        })
    }

    /// Same engine with different calibration.
    pub fn with_calibration(&self, cali: CalibrationParams) -> Result<Self> {
        if cali.gain.len() != self.output_len() || cali.offset.len() != self.output_len() {
            return Err(XbarError::contract("calibration width differs from weight columns"));
        }
        Ok(VmmEngine {
            cali,
            clips: Arc::new(Clips::default()),
            ..self.clone()
        })
    }
}

/// Calibrated crossbar product for one input vector.
pub fn vmm_execute(engine: &VmmEngine, x: &[f64]) -> Result<Vec<f64>> {
    engine.execute(x)
}

/// `xᵀ(A + s)` for the shift `s` used by `mapping`: the value a calibrated
/// column reports before the digital shift removal.
pub fn ideal_shifted(weights: &Matrix, mapping: &WeightMapping, x: &[f64]) -> Vec<f64> {
    let shift = mapping.total_shift() * x.iter().sum::<f64>();
    weights.vec_mul(x).into_iter().map(|y| y + shift).collect()
}
