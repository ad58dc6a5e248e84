//! Reference solver: generic modified nodal analysis over an explicit
//! element list, dense LU with partial pivoting.
//!
//! It shares nothing with the production solver beyond the input types.
//! Zero-valued resistances become 0 V sources rather than being merged.

use super::{check_inputs, ConductanceMatrix, CrossbarConfig, NodeSolution};
use crate::error::{Result, XbarError};

/// Largest `rows·cols` the dense oracle accepts.
pub const ORACLE_MAX_CELLS: usize = 64;

const GROUND: usize = usize::MAX;

enum Element {
    Resistor { a: usize, b: usize, r: f64 },
    Source { pos: usize, neg: usize, volts: f64 },
}

struct Netlist {
    nodes: usize,
    elements: Vec<Element>,
}

impl Netlist {
    fn node(&mut self) -> usize {
        self.nodes += 1;
        self.nodes - 1
    }
}

/// Solves the same network as [`super::simulate`] by dense elimination.
pub fn oracle_solve(config: &CrossbarConfig, g: &ConductanceMatrix, v_in: &[f64]) -> Result<NodeSolution> {
    check_inputs(config, g, v_in)?;
    let (rows, cols) = (config.rows, config.cols);
    if rows * cols > ORACLE_MAX_CELLS {
        return Err(XbarError::contract(format!(
            "oracle limited to {ORACLE_MAX_CELLS} cells, got {rows}x{cols}"
        )));
    }

    let mut net = Netlist {
        nodes: 0,
        elements: Vec::new(),
    };
    let top: Vec<usize> = (0..rows * cols).map(|_| net.node()).collect();
    let bot: Vec<usize> = (0..rows * cols).map(|_| net.node()).collect();
    for i in 0..rows {
        let src = net.node();
        let pad = net.node();
        net.elements.push(Element::Source {
            pos: src,
            neg: GROUND,
            volts: v_in[i],
        });
        net.elements.push(Element::Resistor { a: src, b: pad, r: config.r_in });
        net.elements.push(Element::Resistor {
            a: pad,
            b: top[i * cols],
            r: config.r_wire,
        });
        for j in 0..cols {
            let k = i * cols + j;
            if j + 1 < cols {
                net.elements.push(Element::Resistor {
                    a: top[k],
                    b: top[k + 1],
                    r: config.r_wire,
                });
            }
            if i + 1 < rows {
                net.elements.push(Element::Resistor {
                    a: bot[k],
                    b: bot[k + cols],
                    r: config.r_wire,
                });
            }
            let mid = net.node();
            net.elements.push(Element::Resistor {
                a: top[k],
                b: mid,
                r: 1.0 / g.get(i, j),
            });
            net.elements.push(Element::Resistor {
                a: mid,
                b: bot[k],
                r: config.r_transistor_on,
            });
        }
    }
    let mut sink_elements = Vec::with_capacity(cols);
    for j in 0..cols {
        let pad = net.node();
        net.elements.push(Element::Resistor {
            a: bot[(rows - 1) * cols + j],
            b: pad,
            r: config.r_wire,
        });
        sink_elements.push(net.elements.len());
        net.elements.push(Element::Resistor {
            a: pad,
            b: GROUND,
            r: config.r_out,
        });
    }

    // Unknowns: node voltages, then one branch current per voltage source
    // (including every zero-ohm resistor).
    let mut branch_of = vec![None; net.elements.len()];
    let mut n = net.nodes;
    for (e, el) in net.elements.iter().enumerate() {
        let is_source = match el {
            Element::Source { .. } => true,
            Element::Resistor { r, .. } => *r == 0.0,
        };
        if is_source {
            branch_of[e] = Some(n);
            n += 1;
        }
    }
    let mut a = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    let mut add = |r: usize, c: usize, v: f64| {
        if r != GROUND && c != GROUND {
            a[r * n + c] += v;
        }
    };
    for (e, el) in net.elements.iter().enumerate() {
        match (el, branch_of[e]) {
            (Element::Resistor { a: p, b: q, r }, None) => {
                let y = 1.0 / r;
                add(*p, *p, y);
                add(*q, *q, y);
                add(*p, *q, -y);
                add(*q, *p, -y);
            }
            (Element::Resistor { a: p, b: q, .. }, Some(k)) => {
                add(*p, k, 1.0);
                add(*q, k, -1.0);
                add(k, *p, 1.0);
                add(k, *q, -1.0);
            }
            (Element::Source { pos, neg, volts }, Some(k)) => {
                add(*pos, k, 1.0);
                add(*neg, k, -1.0);
                add(k, *pos, 1.0);
                add(k, *neg, -1.0);
                rhs[k] = *volts;
            }
            (Element::Source { .. }, None) => unreachable!(),
        }
    }

    let x = lu_solve(a.clone(), rhs.clone(), n)?;
    let mut r_sq = 0.0;
    for row in 0..n {
        let ax: f64 = (0..n).map(|c| a[row * n + c] * x[c]).sum();
        r_sq += (rhs[row] - ax).powi(2);
    }
    let b_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let residual = if b_norm > 0.0 { r_sq.sqrt() / b_norm } else { r_sq.sqrt() };

    let i_out = sink_elements
        .iter()
        .map(|&e| match (&net.elements[e], branch_of[e]) {
            (_, Some(k)) => x[k],
            (Element::Resistor { a: p, r, .. }, None) => x[*p] / r,
            _ => unreachable!(),
        })
        .collect();
    Ok(NodeSolution {
        v_top: top.iter().map(|&k| x[k]).collect(),
        v_bot: bot.iter().map(|&k| x[k]).collect(),
        i_out,
        residual,
    })
}

fn lu_solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for k in 0..n {
        let (p, pivot) = (k..n)
            .map(|r| (r, a[r * n + k].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot <= scale * 1e-15 {
            return Err(XbarError::Singular(format!("zero pivot in column {k}")));
        }
        if p != k {
            for c in 0..n {
                a.swap(k * n + c, p * n + c);
            }
            b.swap(k, p);
        }
        let d = a[k * n + k];
        for r in k + 1..n {
            let f = a[r * n + k] / d;
            if f != 0.0 {
                for c in k..n {
                    a[r * n + c] -= f * a[k * n + c];
                }
                b[r] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|c| a[k * n + c] * x[c]).sum();
        x[k] = (b[k] - s) / a[k * n + k];
    }
    Ok(x)
}
