//! Crossbar with zero wire resistance: every row wire is one node, every
//! column wire is one node. A zero terminal resistance pins that side.

use super::solver::norm;
use super::{CrossbarConfig, NodeSolution};
use crate::error::{Result, XbarError};

#[derive(Debug, Clone)]
pub(super) struct LumpedNetwork {
    rows: usize,
    cols: usize,
    branch: Vec<f64>,
    /// `1/r_in`, or `None` when rows are tied to their sources.
    g_source: Option<f64>,
    /// `1/r_out`, or `None` when columns are tied to ground.
    g_sink: Option<f64>,
    /// Row node self-conductance `g_source + Σ_j g_ij`.
    row_diag: Vec<f64>,
    col_sum: Vec<f64>,
    /// Cholesky factor (row-major, lower) of the column Schur complement
    /// when both sides float.
    schur: Option<Vec<f64>>,
}

impl LumpedNetwork {
    pub fn new(config: &CrossbarConfig, branch: Vec<f64>) -> Result<Self> {
        let (rows, cols) = (config.rows, config.cols);
        let g_source = (config.r_in > 0.0).then(|| 1.0 / config.r_in);
        let g_sink = (config.r_out > 0.0).then(|| 1.0 / config.r_out);
        let row_diag: Vec<f64> = (0..rows)
            .map(|i| g_source.unwrap_or(0.0) + branch[i * cols..(i + 1) * cols].iter().sum::<f64>())
            .collect();
        let mut col_sum = vec![0.0; cols];
        for i in 0..rows {
            for j in 0..cols {
                col_sum[j] += branch[i * cols + j];
            }
        }
        let schur = match (g_source, g_sink) {
            (Some(_), Some(go)) => {
                let mut s = vec![0.0; cols * cols];
                for j in 0..cols {
                    s[j * cols + j] = go + col_sum[j];
                }
                for i in 0..rows {
                    let row = &branch[i * cols..(i + 1) * cols];
                    let inv = 1.0 / row_diag[i];
                    for j in 0..cols {
                        let gj = row[j] * inv;
                        for k in 0..=j {
                            s[j * cols + k] -= gj * row[k];
                        }
                    }
                }
                dense_cholesky(&mut s, cols)?;
                Some(s)
            }
            _ => None,
        };
        Ok(LumpedNetwork {
            rows,
            cols,
            branch,
            g_source,
            g_sink,
            row_diag,
            col_sum,
            schur,
        })
    }

    pub fn solve(&self, v_in: &[f64]) -> NodeSolution {
        let (rows, cols) = (self.rows, self.cols);
        let b = &self.branch;
        let (row_v, col_v) = match (self.g_source, self.g_sink) {
            (None, None) => (v_in.to_vec(), vec![0.0; cols]),
            (Some(gs), None) => (
                (0..rows).map(|i| gs * v_in[i] / self.row_diag[i]).collect(),
                vec![0.0; cols],
            ),
            (None, Some(go)) => {
                let mut c = vec![0.0; cols];
                for i in 0..rows {
                    for j in 0..cols {
                        c[j] += b[i * cols + j] * v_in[i];
                    }
                }
                for j in 0..cols {
                    c[j] /= go + self.col_sum[j];
                }
                (v_in.to_vec(), c)
            }
            (Some(gs), Some(_)) => {
                let mut c = vec![0.0; cols];
                for i in 0..rows {
                    let f = gs * v_in[i] / self.row_diag[i];
                    for j in 0..cols {
                        c[j] += b[i * cols + j] * f;
                    }
                }
                dense_cholesky_solve(self.schur.as_ref().expect("factored"), cols, &mut c);
                let r = (0..rows)
                    .map(|i| {
                        let coupled: f64 = (0..cols).map(|j| b[i * cols + j] * c[j]).sum();
                        (gs * v_in[i] + coupled) / self.row_diag[i]
                    })
                    .collect();
                (r, c)
            }
        };

        let i_out: Vec<f64> = match self.g_sink {
            Some(go) => col_v.iter().map(|c| go * c).collect(),
            None => {
                let mut out = vec![0.0; cols];
                for i in 0..rows {
                    for j in 0..cols {
                        out[j] += b[i * cols + j] * row_v[i];
                    }
                }
                out
            }
        };

        let residual = self.residual(v_in, &row_v, &col_v);
        let mut v_top = vec![0.0; rows * cols];
        let mut v_bot = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                v_top[i * cols + j] = row_v[i];
                v_bot[i * cols + j] = col_v[j];
            }
        }
        NodeSolution {
            v_top,
            v_bot,
            i_out,
            residual,
        }
    }

    /// KCL imbalance over the floating nodes relative to the source injections.
    fn residual(&self, v_in: &[f64], row_v: &[f64], col_v: &[f64]) -> f64 {
        let (rows, cols) = (self.rows, self.cols);
        let b = &self.branch;
        let mut r = Vec::new();
        let mut inj = Vec::new();
        if let Some(gs) = self.g_source {
            for i in 0..rows {
                let out: f64 = (0..cols).map(|j| b[i * cols + j] * (row_v[i] - col_v[j])).sum();
                r.push(gs * (v_in[i] - row_v[i]) - out);
                inj.push(gs * v_in[i]);
            }
        }
        if let Some(go) = self.g_sink {
            for j in 0..cols {
                let into: f64 = (0..rows).map(|i| b[i * cols + j] * (row_v[i] - col_v[j])).sum();
                r.push(into - go * col_v[j]);
                if self.g_source.is_none() {
                    inj.push((0..rows).map(|i| b[i * cols + j] * v_in[i]).sum());
                }
            }
        }
        let scale = norm(&inj);
        if scale > 0.0 {
            norm(&r) / scale
        } else {
            norm(&r)
        }
    }
}

fn dense_cholesky(a: &mut [f64], n: usize) -> Result<()> {
    for k in 0..n {
        for j in 0..=k {
            let mut s = a[k * n + j];
            for m in 0..j {
                s -= a[k * n + m] * a[j * n + m];
            }
            if j == k {
                if !(s > 0.0) {
                    return Err(XbarError::Singular(format!("non-positive pivot {s:e} at column {k}")));
                }
                a[k * n + k] = s.sqrt();
            } else {
                a[k * n + j] = s / a[j * n + j];
            }
        }
    }
    Ok(())
}

fn dense_cholesky_solve(l: &[f64], n: usize, x: &mut [f64]) {
    for k in 0..n {
        let mut s = x[k];
        for m in 0..k {
            s -= l[k * n + m] * x[m];
        }
        x[k] = s / l[k * n + k];
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for m in k + 1..n {
            s -= l[m * n + k] * x[m];
        }
        x[k] = s / l[k * n + k];
    }
}
