//! Accuracy metrics, sparsity statistics and synthetic kernels/inputs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conv::FeatureMap;
use crate::error::{Result, XbarError};

/// Seeded generator used everywhere randomness is needed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|actual − ideal| / output_range`.
pub fn relative_error(actual: f64, ideal: f64, output_range: f64) -> Result<f64> {
    if !(output_range > 0.0) {
        return Err(XbarError::Degenerate(format!(
            "output range must be positive, got {output_range}"
        )));
    }
    Ok((actual - ideal).abs() / output_range)
}

/// `max − min` of a set of ideal outputs.
pub fn output_range(ideal: &[f64]) -> f64 {
    let (lo, hi) = ideal
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if ideal.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Effective output resolution in bits for a relative error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BitAccuracy {
    Bits(f64),
    /// Zero error.
    Exact,
}

impl BitAccuracy {
    pub fn bits(&self) -> Option<f64> {
        match self {
            BitAccuracy::Bits(b) => Some(*b),
            BitAccuracy::Exact => None,
        }
    }
}

impl std::fmt::Display for BitAccuracy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BitAccuracy::Bits(b) => write!(f, "{b}"),
            BitAccuracy::Exact => f.write_str("exact"),
        }
    }
}

/// `log2(1/rel_err + 1)`.
pub fn bit_accuracy(rel_err: f64) -> BitAccuracy {
    if rel_err == 0.0 {
        BitAccuracy::Exact
    } else {
        BitAccuracy::Bits((1.0 / rel_err + 1.0).log2())
    }
}

/// Fraction of exact zeros.
pub fn sparsity(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|v| **v == 0.0).count() as f64 / values.len() as f64
}

/// Lower edges of the relative-error histogram bins; the last bin is open.
pub const HISTOGRAM_EDGES: [f64; 14] = [
    0.0, 1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 0.1, 0.2, 0.5, 1.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelErrorStats {
    pub mean: f64,
    pub worst: f64,
    /// Counts per bin of [`HISTOGRAM_EDGES`].
    pub histogram: Vec<u64>,
    pub count: usize,
    pub output_range: f64,
}

impl RelErrorStats {
    pub fn from_errors(errors: &[f64], output_range: f64) -> Self {
        let mut histogram = vec![0u64; HISTOGRAM_EDGES.len()];
        let mut sum = 0.0;
        let mut worst = 0.0f64;
        for &e in errors {
            sum += e;
            worst = worst.max(e);
            let bin = HISTOGRAM_EDGES.partition_point(|edge| *edge <= e).saturating_sub(1);
            histogram[bin] += 1;
        }
        RelErrorStats {
            mean: if errors.is_empty() { 0.0 } else { sum / errors.len() as f64 },
            worst,
            histogram,
            count: errors.len(),
            output_range,
        }
    }

    /// Errors of `actual` against `ideal`, normalized by the range of `ideal`.
    pub fn from_outputs(actual: &[f64], ideal: &[f64]) -> Result<Self> {
        if actual.len() != ideal.len() {
            return Err(XbarError::contract("actual and ideal outputs differ in length"));
        }
        let range = output_range(ideal);
        let errors = actual
            .iter()
            .zip(ideal)
            .map(|(a, i)| relative_error(*a, *i, range))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_errors(&errors, range))
    }
}

/// The three weight distributions kernels come in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelType {
    /// Unconstrained training: close to a zero-mean Gaussian.
    Gaussian = 1,
    /// Gaussian with weights kept away from zero.
    DeadZone = 2,
    /// Ternary {−1, 0, 1}.
    Ternary = 3,
}

impl KernelType {
    pub fn from_index(k: u8) -> Result<Self> {
        match k {
            1 => Ok(KernelType::Gaussian),
            2 => Ok(KernelType::DeadZone),
            3 => Ok(KernelType::Ternary),
            _ => Err(XbarError::config(format!("kernel type must be 1, 2 or 3, got {k}"))),
        }
    }

    pub fn index(&self) -> u8 {
        *self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub sigma: f64,
    /// Type 2: values with `|w| < dead_zone·sigma` are redrawn.
    pub dead_zone: f64,
    /// Type 3: probability of a zero weight.
    pub zero_fraction: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            sigma: 1.0,
            dead_zone: 0.2,
            zero_fraction: 0.5,
        }
    }
}

/// Weights for a kernel of `shape = [kh, kw, in_c, out_c]`, laid out
/// `(kh, kw, in_c, out_c)` row-major.
pub fn gen_kernel(kind: KernelType, shape: [usize; 4], seed: u64) -> Vec<f64> {
    gen_kernel_with(kind, shape, &KernelParams::default(), seed)
}

pub fn gen_kernel_with(kind: KernelType, shape: [usize; 4], params: &KernelParams, seed: u64) -> Vec<f64> {
    let n: usize = shape.iter().product();
    gen_weights(kind, n, params, seed)
}

/// A `rows × cols` weight matrix (row-major) with i.i.d. entries of the given type.
pub fn gen_matrix(kind: KernelType, rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    gen_weights(kind, rows * cols, &KernelParams::default(), seed)
}

fn gen_weights(kind: KernelType, n: usize, p: &KernelParams, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    match kind {
        KernelType::Gaussian => (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                p.sigma * z
            })
            .collect(),
        KernelType::DeadZone => (0..n)
            .map(|_| loop {
                let z: f64 = StandardNormal.sample(&mut rng);
                if z.abs() >= p.dead_zone {
                    break p.sigma * z;
                }
            })
            .collect(),
        KernelType::Ternary => (0..n)
            .map(|_| {
                if rng.random::<f64>() < p.zero_fraction {
                    0.0
                } else if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect(),
    }
}

/// Uniform non-negative values in `(0, 1]` with exactly
/// `round(sparsity·n)` zeros at random positions.
pub fn gen_values(n: usize, sparsity: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(XbarError::contract(format!("sparsity must be in [0, 1], got {sparsity}")));
    }
    let mut rng = rng(seed);
    let zeros = (sparsity * n as f64).round() as usize;
    let mut values: Vec<f64> = (0..n).map(|_| 1.0 - rng.random::<f64>()).collect();
    let mut positions: Vec<usize> = (0..n).collect();
    positions.shuffle(&mut rng);
    for &p in &positions[..zeros] {
        values[p] = 0.0;
    }
    Ok(values)
}

/// A feature map of `(height, width, channels)` filled by [`gen_values`].
pub fn gen_input(shape: [usize; 3], sparsity: f64, seed: u64) -> Result<FeatureMap> {
    let [h, w, c] = shape;
    let data = gen_values(h * w * c, sparsity, seed)?;
    FeatureMap::new(h, w, c, data)
}
