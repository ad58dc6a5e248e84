//! Memristor crossbar simulation and CNN inference on modeled crossbars.
//!
//! The crate is layered bottom-up: [`circuit`] solves the resistive
//! network, [`quant`] models the DAC/ADC, [`vmm`] turns a weight matrix into
//! a converted and calibrated crossbar engine, [`conv`] lowers convolutions
//! onto engines, and [`net`] runs whole networks.

pub mod circuit;
pub mod conv;
pub mod error;
pub mod experiment;
pub mod matrix;
pub mod metrics;
pub mod net;
pub mod quant;
pub mod report;
pub mod vmm;

pub use circuit::{
    ideal_vmm, oracle_solve, simulate, ConductanceMatrix, CrossbarConfig, CrossbarSolver, NodeSolution,
};
pub use conv::{conv_execute, iteration_count, unroll_kernel, window_stream, ConvShape, ConvSpec, FeatureMap};
pub use error::{Result, XbarError};
pub use matrix::Matrix;
pub use metrics::{bit_accuracy, relative_error, sparsity, BitAccuracy, KernelType, RelErrorStats};
pub use quant::{adc_quantize, dac_quantize, AdcSpec, DacSpec};
pub use report::{ErrorReport, ErrorRow};
pub use vmm::{build_engine, map_weights, vmm_execute, BuildOptions, CalibrationParams, VmmEngine, WeightMapping};
