//! Engine files: a JSON descriptor next to a raw little-endian `f64`
//! conductance blob holding `g_target` then `g_converted`, row-major.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CalibrationParams, ConversionReport, EngineParts, SignalSearch, VmmEngine, WeightMapping};
use crate::circuit::{ConductanceMatrix, CrossbarConfig};
use crate::error::{Result, XbarError};
use crate::quant::{AdcSpec, DacSpec};

pub const ENGINE_FORMAT: &str = "xbar-engine";
pub const ENGINE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineDescriptor {
    pub format: String,
    pub version: u32,
    pub config: CrossbarConfig,
    pub mapping: WeightMapping,
    pub v_conv: Option<Vec<f64>>,
    pub calibration: CalibrationParams,
    pub dac: Option<DacSpec>,
    pub adc: Option<AdcSpec>,
    pub conversion: Option<ConversionReport>,
    pub signal_search: Option<SignalSearch>,
    /// Blob file name, relative to the descriptor.
    pub blob_file: String,
    pub blob_sha256: String,
}

fn blob_path_for(json_path: &Path) -> PathBuf {
    json_path.with_extension("bin")
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `<path>` (descriptor) and `<path>.bin` (conductances).
pub fn save_engine(engine: &VmmEngine, path: &Path) -> Result<()> {
    let blob_path = blob_path_for(path);
    let mut blob = Vec::with_capacity(16 * engine.g_target.g.len());
    for v in engine.g_target.g.iter().chain(&engine.g_converted.g) {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    let desc = EngineDescriptor {
        format: ENGINE_FORMAT.into(),
        version: ENGINE_VERSION,
        config: engine.config.clone(),
        mapping: engine.mapping.clone(),
        v_conv: engine.v_conv.clone(),
        calibration: engine.cali.clone(),
        dac: engine.dac,
        adc: engine.adc,
        conversion: engine.conversion.clone(),
        signal_search: engine.signal_search.clone(),
        blob_file: blob_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        blob_sha256: sha256_hex(&blob),
    };
    fs::write(&blob_path, &blob)?;
    let mut json = serde_json::to_string_pretty(&desc)?;
    json.push('\n');
    fs::write(path, json)?;
    Ok(())
}

pub fn load_engine(path: &Path) -> Result<VmmEngine> {
    let desc: EngineDescriptor = serde_json::from_str(&fs::read_to_string(path)?)?;
    if desc.format != ENGINE_FORMAT || desc.version != ENGINE_VERSION {
        return Err(XbarError::format(format!(
            "unsupported engine file {} v{}",
            desc.format, desc.version
        )));
    }
    let blob_path = path.parent().unwrap_or(Path::new(".")).join(&desc.blob_file);
    let blob = fs::read(&blob_path)?;
    let found = sha256_hex(&blob);
    if found != desc.blob_sha256 {
        return Err(XbarError::Checksum {
            path: blob_path.display().to_string(),
            expected: desc.blob_sha256,
            found,
        });
    }
    let cells = desc.config.rows * desc.config.cols;
    if blob.len() != 16 * cells {
        return Err(XbarError::format(format!(
            "engine blob has {} bytes, expected {}",
            blob.len(),
            16 * cells
        )));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let (rows, cols) = (desc.config.rows, desc.config.cols);
    VmmEngine::from_parts(EngineParts {
        g_target: ConductanceMatrix::new(rows, cols, values[..cells].to_vec())?,
        g_converted: ConductanceMatrix::new(rows, cols, values[cells..].to_vec())?,
        config: desc.config,
        mapping: desc.mapping,
        v_conv: desc.v_conv,
        cali: desc.calibration,
        dac: desc.dac,
        adc: desc.adc,
        conversion: desc.conversion,
        signal_search: desc.signal_search,
    })
}
