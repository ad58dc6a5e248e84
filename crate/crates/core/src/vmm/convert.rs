//! Conversion: find `G'` such that the parasitic crossbar driven by the
//! conversion signal reproduces the ideal product with `G`.
//!
//! Each pass solves the network with the current `G'` and rescales every
//! device by the ratio of its ideal branch current to its simulated one,
//! clamped to the device range.

use serde::{Deserialize, Serialize};

use crate::circuit::{ideal_vmm, ConductanceMatrix, CrossbarConfig, CrossbarSolver};
use crate::error::{Result, XbarError};

/// Per-column relative mismatch that counts as converged.
pub const CONVERSION_TOLERANCE: f64 = 1e-6;
pub const CONVERSION_MAX_ITERATIONS: usize = 100;
/// Largest relative device update below which the iteration has reached its
/// fixed point (only clamped devices keep it from the tolerance).
const STALL_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionReport {
    /// Network solves performed.
    pub iterations: usize,
    pub converged: bool,
    /// `|I_sim − I_ideal| / I_ideal` per column for the returned matrix.
    pub column_error: Vec<f64>,
    /// Devices per column whose required compensation exceeds `g_max`.
    pub saturated: Vec<usize>,
}

impl ConversionReport {
    pub fn max_error(&self) -> f64 {
        self.column_error.iter().copied().fold(0.0, f64::max)
    }

    pub fn saturated_total(&self) -> usize {
        self.saturated.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Conversion {
    pub g: ConductanceMatrix,
    pub report: ConversionReport,
}

/// Runs the conversion fixed point. Non-convergence is not an error: the
/// best matrix found is returned with `converged = false`.
pub fn convert(config: &CrossbarConfig, g_target: &ConductanceMatrix, v_conv: &[f64]) -> Result<Conversion> {
    config.validate()?;
    g_target.check_against(config)?;
    if v_conv.len() != config.rows {
        return Err(XbarError::contract(format!(
            "conversion signal has {} entries, crossbar has {} rows",
            v_conv.len(),
            config.rows
        )));
    }
    if v_conv.iter().any(|v| !(*v > 0.0) || *v > config.v_sense_max * (1.0 + 1e-12)) {
        return Err(XbarError::contract(format!(
            "conversion signal entries must lie in (0, {}]",
            config.v_sense_max
        )));
    }

    let (rows, cols) = (config.rows, config.cols);
    let target = ideal_vmm(v_conv, g_target)?;
    let mut g = g_target.clone();
    let mut best: Option<Candidate> = None;
    let mut iterations = 0;

    loop {
        let sol = CrossbarSolver::new(config, &g)?.solve(v_conv)?;
        iterations += 1;
        let column_error: Vec<f64> = sol
            .i_out
            .iter()
            .zip(&target)
            .map(|(s, t)| (s - t).abs() / t)
            .collect();
        let worst = column_error.iter().copied().fold(0.0, f64::max);
        if best.as_ref().is_none_or(|b| worst < b.worst) {
            let saturated = (0..cols)
                .map(|j| {
                    (0..rows)
                        .filter(|&i| {
                            let k = i * cols + j;
                            let simulated = config.branch_conductance(g.g[k]) * (sol.v_top[k] - sol.v_bot[k]);
                            g.g[k] * v_conv[i] * g_target.g[k] > config.g_max * simulated * (1.0 + 1e-9)
                        })
                        .count()
                })
                .collect();
            best = Some(Candidate {
                worst,
                g: g.clone(),
                column_error,
                saturated,
            });
        }
        if worst <= CONVERSION_TOLERANCE || iterations >= CONVERSION_MAX_ITERATIONS {
            break;
        }

        let mut largest_step = 0.0f64;
        for i in 0..rows {
            for j in 0..cols {
                let k = i * cols + j;
                let drop = sol.v_top[k] - sol.v_bot[k];
                let simulated = config.branch_conductance(g.g[k]) * drop;
                let wanted = v_conv[i] * g_target.g[k];
                let next = if simulated > 0.0 {
                    (g.g[k] * wanted / simulated).clamp(config.g_min, config.g_max)
                } else {
                    config.g_max
                };
                largest_step = largest_step.max((next - g.g[k]).abs() / g.g[k]);
                g.g[k] = next;
            }
        }
        if largest_step <= STALL_THRESHOLD {
            break;
        }
    }

    let best = best.expect("at least one solve");
    Ok(Conversion {
        g: best.g,
        report: ConversionReport {
            iterations,
            converged: best.worst <= CONVERSION_TOLERANCE,
            column_error: best.column_error,
            saturated: best.saturated,
        },
    })
}

struct Candidate {
    worst: f64,
    g: ConductanceMatrix,
    column_error: Vec<f64>,
    saturated: Vec<usize>,
}

/// A flat conversion signal at `amplitude · v_sense_max` on every row.
pub fn flat_signal(config: &CrossbarConfig, amplitude: f64) -> Vec<f64> {
    vec![amplitude * config.v_sense_max; config.rows]
}
