use serde::{Deserialize, Serialize};

use crate::error::{Result, XbarError};

/// Per-column first-order fit from measured current to shifted output:
/// `y_shifted[j] = gain[j]·i[j] + offset[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub gain: Vec<f64>,
    pub offset: Vec<f64>,
    pub sample_count: usize,
    /// Columns whose samples carried no spread; they fall back to the nominal gain.
    pub degenerate: Vec<usize>,
}

impl CalibrationParams {
    /// The uncalibrated map: nominal gain, zero offset.
    pub fn nominal(cols: usize, gain: f64) -> Self {
        CalibrationParams {
            gain: vec![gain; cols],
            offset: vec![0.0; cols],
            sample_count: 0,
            degenerate: Vec::new(),
        }
    }

    pub fn apply(&self, j: usize, current: f64) -> f64 {
        self.gain[j] * current + self.offset[j]
    }
}

/// Least-squares line per column.
///
/// `measured[s][j]` is the current of column `j` for sample `s`, `ideal[s][j]`
/// the shifted output it should map to. Columns without spread in the
/// measured currents use `fallback_gain` and an offset matching the means.
pub fn fit_columns(measured: &[Vec<f64>], ideal: &[Vec<f64>], fallback_gain: f64) -> Result<CalibrationParams> {
    let n = measured.len();
    if n < 2 {
        return Err(XbarError::contract(format!(
            "calibration needs at least 2 samples, got {n}"
        )));
    }
    if ideal.len() != n {
        return Err(XbarError::contract("measured and ideal sample counts differ"));
    }
    let cols = measured[0].len();
    if measured.iter().chain(ideal).any(|s| s.len() != cols) {
        return Err(XbarError::contract("calibration samples have inconsistent widths"));
    }

    let mut gain = Vec::with_capacity(cols);
    let mut offset = Vec::with_capacity(cols);
    let mut degenerate = Vec::new();
    let nf = n as f64;
    for j in 0..cols {
        let mean_t = measured.iter().map(|s| s[j]).sum::<f64>() / nf;
        let mean_y = ideal.iter().map(|s| s[j]).sum::<f64>() / nf;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for (m, y) in measured.iter().zip(ideal) {
            let dt = m[j] - mean_t;
            sxx += dt * dt;
            sxy += dt * (y[j] - mean_y);
        }
        let spread = sxx.sqrt() / nf.sqrt();
        let k = if spread <= 1e-12 * mean_t.abs() || sxx == 0.0 {
            degenerate.push(j);
            fallback_gain
        } else {
            sxy / sxx
        };
        if !k.is_finite() || k == 0.0 {
            return Err(XbarError::Degenerate(format!("calibration gain {k} for column {j}")));
        }
        gain.push(k);
        offset.push(mean_y - k * mean_t);
    }
    Ok(CalibrationParams {
        gain,
        offset,
        sample_count: n,
        degenerate,
    })
}
