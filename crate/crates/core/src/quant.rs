//! Input DACs and ramping ADCs, modeled as ideal uniform quantizers.
//!
//! Both map a value onto `2^bits` evenly spaced levels spanning the
//! converter range (round half up) and return the reconstructed analog
//! value. Out-of-range values are clamped and counted.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Result, XbarError};

pub const MIN_BITS: u32 = 2;
pub const MAX_BITS: u32 = 16;

/// Input DAC. `bits: None` disables quantization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DacSpec {
    pub bits: Option<u32>,
    pub v_min: f64,
    pub v_max: f64,
}

/// Output ADC, one shared range per crossbar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdcSpec {
    pub bits: Option<u32>,
    pub i_min: f64,
    pub i_max: f64,
}

fn check_bits(bits: Option<u32>) -> Result<()> {
    match bits {
        Some(b) if !(MIN_BITS..=MAX_BITS).contains(&b) => Err(XbarError::config(format!(
            "quantizer bits must be in {MIN_BITS}..={MAX_BITS} or disabled, got {b}"
        ))),
        _ => Ok(()),
    }
}

impl DacSpec {
    pub fn new(bits: Option<u32>, v_max: f64) -> Result<Self> {
        let spec = DacSpec {
            bits,
            v_min: 0.0,
            v_max,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn disabled(v_max: f64) -> Self {
        DacSpec {
            bits: None,
            v_min: 0.0,
            v_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_bits(self.bits)?;
        if self.v_min != 0.0 || !(self.v_max > self.v_min) || !self.v_max.is_finite() {
            return Err(XbarError::config(format!(
                "DAC range must be [0, v_max] with v_max > 0, got [{}, {}]",
                self.v_min, self.v_max
            )));
        }
        Ok(())
    }

    pub fn lsb(&self) -> Option<f64> {
        self.bits.map(|b| lsb(self.v_min, self.v_max, b))
    }
}

impl AdcSpec {
    pub fn new(bits: Option<u32>, i_min: f64, i_max: f64) -> Result<Self> {
        let spec = AdcSpec { bits, i_min, i_max };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_bits(self.bits)?;
        if !(self.i_min >= 0.0) || !(self.i_max > self.i_min) || !self.i_max.is_finite() {
            return Err(XbarError::config(format!(
                "ADC range must satisfy i_max > i_min >= 0, got [{}, {}]",
                self.i_min, self.i_max
            )));
        }
        Ok(())
    }

    pub fn lsb(&self) -> Option<f64> {
        self.bits.map(|b| lsb(self.i_min, self.i_max, b))
    }
}

/// Counts values that fell outside a converter range.
#[derive(Debug, Default)]
pub struct ClipCounter(AtomicU64);

impl ClipCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

#[inline]
fn lsb(lo: f64, hi: f64, bits: u32) -> f64 {
    (hi - lo) / ((1u64 << bits) - 1) as f64
}

#[inline]
fn quantize(x: f64, lo: f64, hi: f64, bits: Option<u32>, clips: Option<&ClipCounter>) -> f64 {
    let clamped = if x < lo || x > hi {
        if let Some(c) = clips {
            c.record();
        }
        x.clamp(lo, hi)
    } else {
        x
    };
    match bits {
        None => clamped,
        Some(b) => {
            let levels = ((1u64 << b) - 1) as f64;
            let code = ((clamped - lo) / (hi - lo) * levels + 0.5).floor().min(levels);
            if code == levels {
                hi
            } else {
                lo + (hi - lo) * code / levels
            }
        }
    }
}

/// Quantizes a voltage; a disabled DAC passes in-range values unchanged.
pub fn dac_quantize(v: f64, spec: &DacSpec, clips: Option<&ClipCounter>) -> f64 {
    quantize(v, spec.v_min, spec.v_max, spec.bits, clips)
}

/// Quantizes a current to the level the ramp counter latches.
pub fn adc_quantize(i: f64, spec: &AdcSpec, clips: Option<&ClipCounter>) -> f64 {
    quantize(i, spec.i_min, spec.i_max, spec.bits, clips)
}

/// ADC headroom above the largest observed column current.
pub const ADC_HEADROOM: f64 = 1.05;

/// Derives an ADC range from observed column currents: `[0, 1.05·max]`.
pub fn adc_range_from_currents<'a>(
    bits: Option<u32>,
    currents: impl IntoIterator<Item = &'a [f64]>,
) -> Result<AdcSpec> {
    let mut seen = false;
    let mut max = 0.0f64;
    for sample in currents {
        seen = true;
        for &i in sample {
            max = max.max(i);
        }
    }
    if !seen {
        return Err(XbarError::contract("ADC range calibration needs at least one sample"));
    }
    if !(max > 0.0) {
        return Err(XbarError::Degenerate(
            "all calibration samples produced zero output current".into(),
        ));
    }
    AdcSpec::new(bits, 0.0, ADC_HEADROOM * max)
}
