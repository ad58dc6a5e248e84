//! Fixtures shared by the benchmarks.

use xbar_core::circuit::{ConductanceMatrix, CrossbarConfig};
use xbar_core::metrics::{gen_matrix, gen_values, KernelType};
use xbar_core::vmm::{map_weights, BuildOptions, CalibrationMode, ConversionMode};
use xbar_core::{build_engine, Matrix, VmmEngine};

/// Crossbar sizes of the three ResNet-20 stages.
pub const SIZES: [(usize, usize); 3] = [(144, 16), (288, 32), (576, 64)];

pub fn weights(rows: usize, cols: usize) -> Matrix {
    let kind = KernelType::from_index(1).unwrap();
    Matrix::new(rows, cols, gen_matrix(kind, rows, cols, 7)).unwrap()
}

pub fn inputs(rows: usize, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|k| gen_values(rows, 0.5, 100 + k as u64).unwrap()).collect()
}

/// Mapped target conductances for the reference parameters.
pub fn targets(rows: usize, cols: usize) -> (CrossbarConfig, ConductanceMatrix) {
    let config = CrossbarConfig::new(rows, cols);
    let (g, _) = map_weights(&weights(rows, cols), &config, 1.0).unwrap();
    (config, g)
}

/// Direct-mapped, calibrated engine; cheap enough to build per size.
pub fn engine(rows: usize, cols: usize) -> VmmEngine {
    let opts = BuildOptions {
        conversion: ConversionMode::Direct,
        calibration: CalibrationMode::Shuffled(20),
        ..Default::default()
    };
    build_engine(&CrossbarConfig::new(rows, cols), &weights(rows, cols), 1.0, &inputs(rows, 20), &opts).unwrap()
}
