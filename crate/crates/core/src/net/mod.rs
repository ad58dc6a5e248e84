//! Whole-network inference: model files, digital layers, crossbar engines
//! per layer, and the error-propagation and quantization experiments.

mod model;
pub mod ops;
mod run;
mod tensor;
pub mod zoo;

pub use model::{load_model, save_model, Layer, LayerDef, LayerKind, LayerOp, LayerRecord, Manifest, NetworkModel};
pub use run::{
    build_report, quantization_sweep, run_batch, run_inference, software_forward, AnalogNetwork, BitSetting, Inference,
    LayerEngine, LayerTrace, Mode, PrepareOptions, SweepResult, SweepRow, Taps,
};
pub use tensor::{labels_from_tensor, read_tensor, write_tensor, Tensor, TENSOR_MAGIC, TENSOR_VERSION};
