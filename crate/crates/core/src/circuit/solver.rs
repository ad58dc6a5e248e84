use super::banded::BandMatrix;
use super::lumped::LumpedNetwork;
use super::{check_inputs, ConductanceMatrix, CrossbarConfig, NodeSolution};
use crate::error::{Result, XbarError};

/// Relative residual a solve has to reach.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

const MAX_REFINEMENTS: usize = 3;

/// Solves the crossbar network for one input vector.
pub fn simulate(config: &CrossbarConfig, g: &ConductanceMatrix, v_in: &[f64]) -> Result<NodeSolution> {
    simulate_with_tolerance(config, g, v_in, DEFAULT_TOLERANCE)
}

pub fn simulate_with_tolerance(
    config: &CrossbarConfig,
    g: &ConductanceMatrix,
    v_in: &[f64],
    tolerance: f64,
) -> Result<NodeSolution> {
    check_inputs(config, g, v_in)?;
    CrossbarSolver::new(config, g)?
        .with_tolerance(tolerance)
        .solve(v_in)
}

/// A crossbar whose nodal matrix has been factored once, ready to solve
/// any number of input vectors.
///
/// With `r_wire > 0` every cross-point is a distinct node and the system is
/// factored as a band matrix, numbering nodes along the shorter array
/// dimension so the half-bandwidth is `2·min(rows, cols)`. With `r_wire = 0`
/// each row and column wire collapses to one node and the reduced network
/// is solved directly.
#[derive(Debug, Clone)]
pub struct CrossbarSolver {
    config: CrossbarConfig,
    tolerance: f64,
    backend: Backend,
}

#[derive(Debug, Clone)]
enum Backend {
    Grid(GridNetwork),
    Lumped(LumpedNetwork),
}

impl CrossbarSolver {
    pub fn new(config: &CrossbarConfig, g: &ConductanceMatrix) -> Result<Self> {
        config.validate()?;
        g.check_against(config)?;
        let branch: Vec<f64> = g.g.iter().map(|&x| config.branch_conductance(x)).collect();
        let backend = if config.r_wire > 0.0 {
            Backend::Grid(GridNetwork::new(config, branch)?)
        } else {
            Backend::Lumped(LumpedNetwork::new(config, branch)?)
        };
        Ok(CrossbarSolver {
            config: config.clone(),
            tolerance: DEFAULT_TOLERANCE,
            backend,
        })
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn config(&self) -> &CrossbarConfig {
        &self.config
    }

    pub fn solve(&self, v_in: &[f64]) -> Result<NodeSolution> {
        if v_in.len() != self.config.rows {
            return Err(XbarError::contract(format!(
                "input has {} entries, crossbar has {} rows",
                v_in.len(),
                self.config.rows
            )));
        }
        let sol = match &self.backend {
            Backend::Grid(net) => net.solve(v_in, self.tolerance)?,
            Backend::Lumped(net) => net.solve(v_in),
        };
        if !(sol.residual <= self.tolerance) {
            return Err(XbarError::NonConvergence {
                residual: sol.residual,
                tolerance: self.tolerance,
            });
        }
        Ok(sol)
    }

    /// Output currents only.
    pub fn output_currents(&self, v_in: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solve(v_in)?.i_out)
    }
}

/// Node numbering of the full two-layer grid.
#[derive(Debug, Clone, Copy)]
struct Layout {
    rows: usize,
    cols: usize,
    row_major: bool,
}

impl Layout {
    fn new(rows: usize, cols: usize) -> Self {
        Layout {
            rows,
            cols,
            row_major: cols <= rows,
        }
    }

    fn unknowns(&self) -> usize {
        2 * self.rows * self.cols
    }

    fn bandwidth(&self) -> usize {
        2 * self.rows.min(self.cols)
    }

    #[inline]
    fn top(&self, i: usize, j: usize) -> usize {
        if self.row_major {
            2 * (i * self.cols + j)
        } else {
            2 * (j * self.rows + i)
        }
    }

    #[inline]
    fn bot(&self, i: usize, j: usize) -> usize {
        self.top(i, j) + 1
    }
}

#[derive(Debug, Clone)]
struct GridNetwork {
    layout: Layout,
    branch: Vec<f64>,
    g_wire: f64,
    g_source: f64,
    g_sink: f64,
    factor: BandMatrix,
}

impl GridNetwork {
    fn new(config: &CrossbarConfig, branch: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(config.rows, config.cols);
        let g_wire = 1.0 / config.r_wire;
        // The edge segment sits in series with the terminal resistance.
        let g_source = 1.0 / (config.r_in + config.r_wire);
        let g_sink = 1.0 / (config.r_out + config.r_wire);
        let (rows, cols) = (config.rows, config.cols);
        let mut a = BandMatrix::zeros(layout.unknowns(), layout.bandwidth());
        for i in 0..rows {
            for j in 0..cols {
                a.stamp(layout.top(i, j), layout.bot(i, j), branch[i * cols + j]);
                if j + 1 < cols {
                    a.stamp(layout.top(i, j), layout.top(i, j + 1), g_wire);
                }
                if i + 1 < rows {
                    a.stamp(layout.bot(i, j), layout.bot(i + 1, j), g_wire);
                }
            }
            a.add_diag(layout.top(i, 0), g_source);
        }
        for j in 0..cols {
            a.add_diag(layout.bot(rows - 1, j), g_sink);
        }
        a.factor()?;
        Ok(GridNetwork {
            layout,
            branch,
            g_wire,
            g_source,
            g_sink,
            factor: a,
        })
    }

    /// `b − A·x`, assembled branch by branch from the network itself.
    fn kcl_imbalance(&self, v_in: &[f64], x: &[f64]) -> Vec<f64> {
        let l = self.layout;
        let (rows, cols) = (l.rows, l.cols);
        let mut r = vec![0.0; l.unknowns()];
        for i in 0..rows {
            let t0 = l.top(i, 0);
            r[t0] += self.g_source * (v_in[i] - x[t0]);
            for j in 0..cols {
                let (t, b) = (l.top(i, j), l.bot(i, j));
                let dev = self.branch[i * cols + j] * (x[t] - x[b]);
                r[t] -= dev;
                r[b] += dev;
                if j + 1 < cols {
                    let t1 = l.top(i, j + 1);
                    let w = self.g_wire * (x[t] - x[t1]);
                    r[t] -= w;
                    r[t1] += w;
                }
                if i + 1 < rows {
                    let b1 = l.bot(i + 1, j);
                    let w = self.g_wire * (x[b] - x[b1]);
                    r[b] -= w;
                    r[b1] += w;
                }
            }
        }
        for j in 0..cols {
            let b = l.bot(rows - 1, j);
            r[b] -= self.g_sink * x[b];
        }
        r
    }

    fn solve(&self, v_in: &[f64], tolerance: f64) -> Result<NodeSolution> {
        let l = self.layout;
        let mut x = vec![0.0; l.unknowns()];
        let mut b_norm_sq = 0.0;
        for (i, &v) in v_in.iter().enumerate() {
            let inj = self.g_source * v;
            x[l.top(i, 0)] = inj;
            b_norm_sq += inj * inj;
        }
        let b_norm = b_norm_sq.sqrt();
        self.factor.solve_in_place(&mut x);

        let mut residual = 0.0;
        if b_norm > 0.0 {
            for step in 0..=MAX_REFINEMENTS {
                let mut r = self.kcl_imbalance(v_in, &x);
                residual = norm(&r) / b_norm;
                if residual <= tolerance * 1e-2 || step == MAX_REFINEMENTS {
                    break;
                }
                self.factor.solve_in_place(&mut r);
                for (xi, di) in x.iter_mut().zip(&r) {
                    *xi += di;
                }
            }
        }

        let (rows, cols) = (l.rows, l.cols);
        let mut v_top = vec![0.0; rows * cols];
        let mut v_bot = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                v_top[i * cols + j] = x[l.top(i, j)];
                v_bot[i * cols + j] = x[l.bot(i, j)];
            }
        }
        let i_out = (0..cols)
            .map(|j| self.g_sink * x[l.bot(rows - 1, j)])
            .collect();
        Ok(NodeSolution {
            v_top,
            v_bot,
            i_out,
            residual,
        })
    }
}

pub(super) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
