//! Resistive-network model of a 1T1M memristor crossbar.
//!
//! Inputs drive the rows at the west edge through `r_in`, outputs sink at
//! the south end of each column through `r_out` into virtual ground. Every
//! pair of adjacent cross-points is joined by one wire segment of `r_wire`,
//! and one more segment joins each edge cross-point to its terminal.
//! The select transistor is a fixed series resistance in the device branch.

mod banded;
mod lumped;
mod oracle;
mod solver;

pub use oracle::{oracle_solve, ORACLE_MAX_CELLS};
pub use solver::{simulate, simulate_with_tolerance, CrossbarSolver, DEFAULT_TOLERANCE};

use serde::{Deserialize, Serialize};

use crate::error::{Result, XbarError};

/// Physical parameters of one crossbar instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbarConfig {
    pub rows: usize,
    pub cols: usize,
    /// Lowest programmable conductance (S), i.e. 1/R_off.
    pub g_min: f64,
    /// Highest programmable conductance (S), i.e. 1/R_on.
    pub g_max: f64,
    /// Resistance of one wire segment (Ω).
    pub r_wire: f64,
    /// Source resistance in front of every row (Ω).
    pub r_in: f64,
    /// Sink resistance behind every column (Ω).
    pub r_out: f64,
    /// Series on-resistance of the select transistor (Ω).
    pub r_transistor_on: f64,
    /// Upper end of the input voltage range `[0, v_sense_max]` (V).
    pub v_sense_max: f64,
}

/// Lowest memristor resistance.
pub const DEFAULT_R_ON: f64 = 15_000.0;
/// Highest memristor resistance.
pub const DEFAULT_R_OFF: f64 = 300_000.0;
pub const DEFAULT_R_WIRE: f64 = 1.0;
pub const DEFAULT_R_TERMINAL: f64 = 1.0;
pub const DEFAULT_V_SENSE: f64 = 0.2;

impl CrossbarConfig {
    /// A crossbar with the reference physical parameters: 15 kΩ / 300 kΩ
    /// devices, 1 Ω wire segments and terminals, 0.2 V sensing.
    pub fn new(rows: usize, cols: usize) -> Self {
        CrossbarConfig {
            rows,
            cols,
            g_min: 1.0 / DEFAULT_R_OFF,
            g_max: 1.0 / DEFAULT_R_ON,
            r_wire: DEFAULT_R_WIRE,
            r_in: DEFAULT_R_TERMINAL,
            r_out: DEFAULT_R_TERMINAL,
            r_transistor_on: 0.0,
            v_sense_max: DEFAULT_V_SENSE,
        }
    }

    /// Same device range, no parasitic resistance anywhere.
    pub fn ideal(rows: usize, cols: usize) -> Self {
        CrossbarConfig {
            r_wire: 0.0,
            r_in: 0.0,
            r_out: 0.0,
            r_transistor_on: 0.0,
            ..Self::new(rows, cols)
        }
    }

    /// Copy of this configuration resized to `rows × cols`.
    pub fn with_size(&self, rows: usize, cols: usize) -> Self {
        CrossbarConfig {
            rows,
            cols,
            ..self.clone()
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.r_wire == 0.0 && self.r_in == 0.0 && self.r_out == 0.0 && self.r_transistor_on == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(XbarError::config("crossbar must have at least one row and column"));
        }
        if !(self.g_min.is_finite() && self.g_max.is_finite()) || self.g_min <= 0.0 || self.g_min >= self.g_max {
            return Err(XbarError::config(format!(
                "need 0 < g_min < g_max, got g_min={} g_max={}",
                self.g_min, self.g_max
            )));
        }
        for (name, r) in [
            ("r_wire", self.r_wire),
            ("r_in", self.r_in),
            ("r_out", self.r_out),
            ("r_transistor_on", self.r_transistor_on),
        ] {
            if !r.is_finite() || r < 0.0 {
                return Err(XbarError::config(format!("{name} must be finite and >= 0, got {r}")));
            }
        }
        if !self.v_sense_max.is_finite() || self.v_sense_max <= 0.0 {
            return Err(XbarError::config(format!(
                "v_sense_max must be > 0, got {}",
                self.v_sense_max
            )));
        }
        Ok(())
    }

    /// Conductance of a device branch: memristor in series with the select transistor.
    #[inline]
    pub fn branch_conductance(&self, g: f64) -> f64 {
        if self.r_transistor_on == 0.0 {
            g
        } else {
            1.0 / (1.0 / g + self.r_transistor_on)
        }
    }
}

/// Device conductances in siemens, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConductanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub g: Vec<f64>,
}

impl ConductanceMatrix {
    pub fn new(rows: usize, cols: usize, g: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(XbarError::contract("conductance matrix must be non-empty"));
        }
        if g.len() != rows * cols {
            return Err(XbarError::contract(format!(
                "conductance data has {} entries, expected {rows}x{cols}",
                g.len()
            )));
        }
        Ok(ConductanceMatrix { rows, cols, g })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        ConductanceMatrix {
            rows,
            cols,
            g: vec![value; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.g[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.g[i * self.cols..(i + 1) * self.cols]
    }

    /// Checks shape against `config` and every entry against `[g_min, g_max]`.
    pub fn check_against(&self, config: &CrossbarConfig) -> Result<()> {
        if self.rows != config.rows || self.cols != config.cols {
            return Err(XbarError::contract(format!(
                "conductance matrix is {}x{}, crossbar is {}x{}",
                self.rows, self.cols, config.rows, config.cols
            )));
        }
        let slack = 1e-12 * config.g_max;
        for (k, &g) in self.g.iter().enumerate() {
            if !g.is_finite() || g < config.g_min - slack || g > config.g_max + slack {
                return Err(XbarError::contract(format!(
                    "conductance at ({}, {}) = {g:e} S outside [{:e}, {:e}]",
                    k / self.cols,
                    k % self.cols,
                    config.g_min,
                    config.g_max
                )));
            }
        }
        Ok(())
    }
}

/// Node voltages and output currents of one solved crossbar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSolution {
    /// Row-wire node voltages, row-major `rows × cols`.
    pub v_top: Vec<f64>,
    /// Column-wire node voltages, row-major `rows × cols`.
    pub v_bot: Vec<f64>,
    /// Current leaving each column into the sink (A).
    pub i_out: Vec<f64>,
    /// `‖b − A·x‖ / ‖b‖` of the nodal system.
    pub residual: f64,
}

impl NodeSolution {
    /// Voltage across the device branch at `(i, j)`.
    pub fn branch_voltage(&self, cols: usize, i: usize, j: usize) -> f64 {
        let k = i * cols + j;
        self.v_top[k] - self.v_bot[k]
    }
}

/// Ideal crossbar product `I = Vᵀ·G`.
///
/// Each output is accumulated in ascending row order, so the result is
/// independent of platform and thread count.
pub fn ideal_vmm(v_in: &[f64], g: &ConductanceMatrix) -> Result<Vec<f64>> {
    if v_in.len() != g.rows {
        return Err(XbarError::contract(format!(
            "input has {} entries, matrix has {} rows",
            v_in.len(),
            g.rows
        )));
    }
    let mut out = vec![0.0; g.cols];
    for (i, &v) in v_in.iter().enumerate() {
        for (acc, &gij) in out.iter_mut().zip(g.row(i)) {
            *acc += v * gij;
        }
    }
    Ok(out)
}

pub(crate) fn check_inputs(config: &CrossbarConfig, g: &ConductanceMatrix, v_in: &[f64]) -> Result<()> {
    config.validate()?;
    g.check_against(config)?;
    if v_in.len() != config.rows {
        return Err(XbarError::contract(format!(
            "input has {} entries, crossbar has {} rows",
            v_in.len(),
            config.rows
        )));
    }
    let slack = 1e-12 * config.v_sense_max;
    if let Some((i, v)) = v_in
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < -slack || **v > config.v_sense_max + slack)
    {
        return Err(XbarError::contract(format!(
            "input voltage {v} at row {i} outside [0, {}]",
            config.v_sense_max
        )));
    }
    Ok(())
}
