use serde::{Deserialize, Serialize};

use crate::circuit::{ConductanceMatrix, CrossbarConfig};
use crate::error::{Result, XbarError};
use crate::matrix::Matrix;

/// Scalars that take a real matrix `A` onto conductances and inputs onto
/// row voltages.
///
/// Weights are shifted by `c` so `A + c ≥ 0`, then
/// `g = g_min + beta·(a + c)`; inputs become `v = alpha·x`. The current
/// through an ideal column is therefore
/// `alpha·beta·xᵀ(A + c + g_min/beta)`, which is why the digital side
/// removes [`WeightMapping::total_shift`] times `sum(x)` rather than `c`
/// alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMapping {
    pub c: f64,
    /// Volts per input unit.
    pub alpha: f64,
    /// Siemens per weight unit.
    pub beta: f64,
    pub x_max: f64,
    /// Shape of the source matrix; the crossbar may be larger.
    pub weight_rows: usize,
    pub weight_cols: usize,
    /// `g_min / beta`: the weight-domain value carried by a device at `g_min`.
    pub floor: f64,
}

impl WeightMapping {
    pub fn total_shift(&self) -> f64 {
        self.c + self.floor
    }

    /// Nominal current-to-output gain of an ideal crossbar.
    pub fn nominal_gain(&self) -> f64 {
        1.0 / (self.alpha * self.beta)
    }
}

/// Direct (uncompensated) mapping of `a` onto a crossbar.
pub fn map_weights(a: &Matrix, config: &CrossbarConfig, x_max: f64) -> Result<(ConductanceMatrix, WeightMapping)> {
    config.validate()?;
    if a.is_empty() || a.rows == 0 || a.cols == 0 {
        return Err(XbarError::contract("weight matrix is empty"));
    }
    if a.data.iter().any(|v| !v.is_finite()) {
        return Err(XbarError::contract("weight matrix has non-finite entries"));
    }
    if a.rows > config.rows || a.cols > config.cols {
        return Err(XbarError::contract(format!(
            "{}x{} weights do not fit a {}x{} crossbar",
            a.rows, a.cols, config.rows, config.cols
        )));
    }
    if !(x_max > 0.0) || !x_max.is_finite() {
        return Err(XbarError::contract(format!("x_max must be positive, got {x_max}")));
    }

    let c = (-a.min()).max(0.0);
    let span = a.max() + c;
    let range = config.g_max - config.g_min;
    // An all-zero matrix leaves every device at g_min; any positive beta works.
    let beta = if span > 0.0 { range / span } else { range };
    let mut g = ConductanceMatrix::filled(config.rows, config.cols, config.g_min);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let v = config.g_min + beta * (a.get(i, j) + c);
            g.set(i, j, v.clamp(config.g_min, config.g_max));
        }
    }
    let mapping = WeightMapping {
        c,
        alpha: config.v_sense_max / x_max,
        beta,
        x_max,
        weight_rows: a.rows,
        weight_cols: a.cols,
        floor: config.g_min / beta,
    };
    Ok((g, mapping))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{gen_matrix, KernelType};

    #[test]
    fn symmetric_two_by_two() {
        let cfg = CrossbarConfig::new(2, 2);
        let a = Matrix::new(2, 2, vec![-1.0, 0.0, 0.0, 1.0]).unwrap();
        let (g, m) = map_weights(&a, &cfg, 1.0).unwrap();
        assert_eq!(m.c, 1.0);
        assert!((m.beta - (cfg.g_max - cfg.g_min) / 2.0).abs() < 1e-20);
        let mid = (cfg.g_min + cfg.g_max) / 2.0;
        assert_eq!(g.get(0, 0), cfg.g_min);
        assert!((g.get(0, 1) - mid).abs() < 1e-18);
        assert!((g.get(1, 0) - mid).abs() < 1e-18);
        assert!((g.get(1, 1) - cfg.g_max).abs() < 1e-18);
        assert_eq!(m.alpha, 0.2);
    }

    #[test]
    fn zeros_map_to_floor() {
        let cfg = CrossbarConfig::new(3, 3);
        let (g, m) = map_weights(&Matrix::zeros(3, 3), &cfg, 2.0).unwrap();
        assert_eq!(m.c, 0.0);
        assert!(g.g.iter().all(|v| *v == cfg.g_min));
        assert_eq!(m.alpha, 0.1);
    }

    #[test]
    fn ternary_has_three_levels() {
        let cfg = CrossbarConfig::new(27, 16);
        let a = Matrix::new(27, 16, gen_matrix(KernelType::Ternary, 27, 16, 3)).unwrap();
        let (g, _) = map_weights(&a, &cfg, 1.0).unwrap();
        let mut levels: Vec<f64> = g.g.clone();
        levels.sort_by(f64::total_cmp);
        levels.dedup_by(|x, y| (*x - *y).abs() < 1e-18);
        let mid = (cfg.g_min + cfg.g_max) / 2.0;
        assert_eq!(levels.len(), 3);
        assert_eq!(levels[0], cfg.g_min);
        assert!((levels[1] - mid).abs() < 1e-18);
        assert!((levels[2] - cfg.g_max).abs() < 1e-18);
    }

    #[test]
    fn unused_positions_sit_at_g_min() {
        let cfg = CrossbarConfig::new(4, 4);
        let a = Matrix::new(2, 3, vec![1.0, -2.0, 0.5, 0.0, 3.0, -1.0]).unwrap();
        let (g, m) = map_weights(&a, &cfg, 1.0).unwrap();
        assert_eq!((m.weight_rows, m.weight_cols), (2, 3));
        for i in 0..4 {
            for j in 0..4 {
                if i >= 2 || j >= 3 {
                    assert_eq!(g.get(i, j), cfg.g_min);
                }
            }
        }
        g.check_against(&cfg).unwrap();
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = CrossbarConfig::new(2, 2);
        assert!(map_weights(&Matrix::zeros(3, 2), &cfg, 1.0).is_err());
        assert!(map_weights(&Matrix::new(1, 1, vec![f64::NAN]).unwrap(), &cfg, 1.0).is_err());
        assert!(map_weights(&Matrix::zeros(0, 0), &cfg, 1.0).is_err());
        assert!(map_weights(&Matrix::zeros(1, 1), &cfg, 0.0).is_err());
    }
}
