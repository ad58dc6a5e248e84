//! Network graphs and the JSON manifest + weight blob they are stored in.
//!
//! Blob offsets and lengths are in bytes. Convolution and FC layers store
//! their unrolled `(kh·kw·in_c) × out_c` matrix row-major; batch norm
//! stores `scale[C]` followed by `bias[C]`. All values are little-endian `f32`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::conv::{unroll_kernel, ConvShape, ConvSpec};
use crate::error::{Result, XbarError};
use crate::matrix::Matrix;
use crate::report::write_file;
use crate::vmm::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Conv,
    Fc,
    Relu,
    Batchnorm,
    GlobalAvgPool,
    Add,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub kind: LayerKind,
    #[serde(default)]
    pub params: Value,
    #[serde(default)]
    pub predecessors: Vec<String>,
    #[serde(default)]
    pub blob_offset: u64,
    #[serde(default)]
    pub blob_len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub layers: Vec<LayerRecord>,
    pub blob_file: String,
    pub blob_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputParams {
    shape: [usize; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvParams {
    kernel_h: usize,
    kernel_w: usize,
    in_channels: usize,
    out_channels: usize,
    #[serde(default = "one")]
    stride: usize,
    #[serde(default)]
    padding: usize,
    /// Projection on a residual shortcut, running alongside the main path.
    #[serde(default)]
    shortcut: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FcParams {
    in_features: usize,
    out_features: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchnormParams {
    channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerOp {
    Input { shape: [usize; 3] },
    Conv { spec: ConvSpec, shortcut: bool },
    /// Fully connected on a `1 × 1 × in` map, run as a 1×1 convolution.
    Fc { spec: ConvSpec },
    Relu,
    BatchNorm { scale: Vec<f64>, bias: Vec<f64> },
    GlobalAvgPool,
    Add,
    Softmax,
}

impl LayerOp {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerOp::Input { .. } => LayerKind::Input,
            LayerOp::Conv { .. } => LayerKind::Conv,
            LayerOp::Fc { .. } => LayerKind::Fc,
            LayerOp::Relu => LayerKind::Relu,
            LayerOp::BatchNorm { .. } => LayerKind::Batchnorm,
            LayerOp::GlobalAvgPool => LayerKind::GlobalAvgPool,
            LayerOp::Add => LayerKind::Add,
            LayerOp::Softmax => LayerKind::Softmax,
        }
    }

    /// The kernel of a crossbar layer.
    pub fn crossbar_spec(&self) -> Option<&ConvSpec> {
        match self {
            LayerOp::Conv { spec, .. } | LayerOp::Fc { spec } => Some(spec),
            _ => None,
        }
    }

    fn params(&self) -> Value {
        match self {
            LayerOp::Input { shape } => serde_json::json!({ "shape": shape }),
            LayerOp::Conv { spec, shortcut } => {
                let s = spec.shape;
                let mut v = serde_json::json!({
                    "kernel_h": s.kernel_h,
                    "kernel_w": s.kernel_w,
                    "in_channels": s.in_channels,
                    "out_channels": s.out_channels,
                    "stride": s.stride,
                    "padding": s.padding,
                });
                if *shortcut {
                    v["shortcut"] = Value::Bool(true);
                }
                v
            }
            LayerOp::Fc { spec } => serde_json::json!({
                "in_features": spec.shape.in_channels,
                "out_features": spec.shape.out_channels,
            }),
            LayerOp::BatchNorm { scale, .. } => serde_json::json!({ "channels": scale.len() }),
            _ => serde_json::json!({}),
        }
    }

    fn blob_values(&self) -> Vec<f64> {
        match self {
            LayerOp::Conv { spec, .. } | LayerOp::Fc { spec } => unroll_kernel(spec).data,
            LayerOp::BatchNorm { scale, bias } => scale.iter().chain(bias).copied().collect(),
            _ => Vec::new(),
        }
    }
}

/// A layer as written by hand or by a model builder.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDef {
    pub name: String,
    pub op: LayerOp,
    pub predecessors: Vec<String>,
}

impl LayerDef {
    pub fn new(name: impl Into<String>, op: LayerOp, predecessors: &[&str]) -> Self {
        LayerDef {
            name: name.into(),
            op,
            predecessors: predecessors.iter().map(|p| p.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub op: LayerOp,
    /// Indices of the predecessor layers.
    pub inputs: Vec<usize>,
    pub out_shape: [usize; 3],
}

/// A validated, topologically ordered CNN graph with one input and one
/// softmax sink.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub name: String,
    pub layers: Vec<Layer>,
}

impl NetworkModel {
    pub fn from_defs(name: impl Into<String>, defs: Vec<LayerDef>) -> Result<Self> {
        let mut index = HashMap::new();
        for (k, d) in defs.iter().enumerate() {
            if index.insert(d.name.as_str(), k).is_some() {
                return Err(XbarError::format(format!("duplicate layer name {}", d.name)));
            }
        }
        let inputs: Vec<usize> = defs
            .iter()
            .enumerate()
            .filter(|(_, d)| d.op.kind() == LayerKind::Input)
            .map(|(k, _)| k)
            .collect();
        if inputs.len() != 1 {
            return Err(XbarError::format(format!("need exactly one input layer, found {}", inputs.len())));
        }
        let softmax = defs.iter().filter(|d| d.op.kind() == LayerKind::Softmax).count();
        if softmax != 1 {
            return Err(XbarError::format(format!("need exactly one softmax layer, found {softmax}")));
        }

        let mut preds = Vec::with_capacity(defs.len());
        for d in &defs {
            let want = match d.op.kind() {
                LayerKind::Input => 0,
                LayerKind::Add => 2,
                _ => 1,
            };
            if d.predecessors.len() != want {
                return Err(XbarError::format(format!(
                    "layer {} needs {want} predecessor(s), has {}",
                    d.name,
                    d.predecessors.len()
                )));
            }
            let p = d
                .predecessors
                .iter()
                .map(|n| {
                    index
                        .get(n.as_str())
                        .copied()
                        .ok_or_else(|| XbarError::format(format!("layer {} refers to unknown layer {n}", d.name)))
                })
                .collect::<Result<Vec<_>>>()?;
            preds.push(p);
        }

        // Kahn's algorithm, always taking the earliest ready layer.
        let n = defs.len();
        let mut pending: Vec<usize> = preds.iter().map(|p| p.len()).collect();
        let mut succ = vec![Vec::new(); n];
        for (k, p) in preds.iter().enumerate() {
            for &q in p {
                succ[q].push(k);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|k| pending[*k] == 0).collect();
        while let Some(k) = ready.pop_first() {
            order.push(k);
            for &s in &succ[k] {
                pending[s] -= 1;
                if pending[s] == 0 {
                    ready.insert(s);
                }
            }
        }
        if order.len() != n {
            return Err(XbarError::format("layer graph has a cycle"));
        }
        for (k, d) in defs.iter().enumerate() {
            let sink = succ[k].is_empty();
            if sink != (d.op.kind() == LayerKind::Softmax) {
                return Err(XbarError::format(format!(
                    "layer {} {}",
                    d.name,
                    if sink { "has no consumer" } else { "is a softmax with consumers" }
                )));
            }
        }

        let mut position = vec![0; n];
        for (p, &k) in order.iter().enumerate() {
            position[k] = p;
        }
        let mut defs: Vec<Option<LayerDef>> = defs.into_iter().map(Some).collect();
        let mut layers: Vec<Layer> = Vec::with_capacity(n);
        for &k in &order {
            let d = defs[k].take().expect("each layer placed once");
            let inputs: Vec<usize> = preds[k].iter().map(|&q| position[q]).collect();
            let in_shapes: Vec<[usize; 3]> = inputs.iter().map(|&i| layers[i].out_shape).collect();
            let out_shape = infer_shape(&d, &in_shapes)?;
            layers.push(Layer {
                name: d.name,
                op: d.op,
                inputs,
                out_shape,
            });
        }
        Ok(NetworkModel {
            name: name.into(),
            layers,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.layers[0].out_shape
    }

    pub fn classes(&self) -> usize {
        let [h, w, c] = self.layers.last().expect("validated model").out_shape;
        h * w * c
    }

    /// Indices of layers that run on crossbars.
    pub fn crossbar_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&k| self.layers[k].op.crossbar_spec().is_some())
            .collect()
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn to_defs(&self) -> Vec<LayerDef> {
        self.layers
            .iter()
            .map(|l| LayerDef {
                name: l.name.clone(),
                op: l.op.clone(),
                predecessors: l.inputs.iter().map(|&i| self.layers[i].name.clone()).collect(),
            })
            .collect()
    }
}

fn infer_shape(d: &LayerDef, ins: &[[usize; 3]]) -> Result<[usize; 3]> {
    let bad = |msg: String| Err(XbarError::format(format!("layer {}: {msg}", d.name)));
    match &d.op {
        LayerOp::Input { shape } => {
            if shape.contains(&0) {
                return bad("input shape must be positive".into());
            }
            Ok(*shape)
        }
        LayerOp::Conv { spec, .. } => {
            let [h, w, c] = ins[0];
            if c != spec.shape.in_channels {
                return bad(format!("expects {} channels, gets {c}", spec.shape.in_channels));
            }
            let (oh, ow) = spec.shape.output_dims(h, w).map_err(|e| XbarError::format(format!("layer {}: {e}", d.name)))?;
            Ok([oh, ow, spec.shape.out_channels])
        }
        LayerOp::Fc { spec } => {
            if ins[0] != [1, 1, spec.shape.in_channels] {
                return bad(format!("expects a 1x1x{} input, gets {:?}", spec.shape.in_channels, ins[0]));
            }
            Ok([1, 1, spec.shape.out_channels])
        }
        LayerOp::BatchNorm { scale, bias } => {
            if scale.len() != ins[0][2] || bias.len() != ins[0][2] {
                return bad(format!("has {} parameters for {} channels", scale.len(), ins[0][2]));
            }
            Ok(ins[0])
        }
        LayerOp::Add => {
            if ins[0] != ins[1] {
                return bad(format!("adds mismatched shapes {:?} and {:?}", ins[0], ins[1]));
            }
            Ok(ins[0])
        }
        LayerOp::GlobalAvgPool => Ok([1, 1, ins[0][2]]),
        LayerOp::Relu | LayerOp::Softmax => Ok(ins[0]),
    }
}

fn blob_path(manifest: &Path, blob_file: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(blob_file)
}

/// Writes the manifest to `path` and the weights to `<path stem>.bin` next to it.
pub fn save_model(model: &NetworkModel, path: &Path) -> Result<()> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let blob_file = format!("{stem}.bin");
    let mut blob = Vec::new();
    let mut records = Vec::with_capacity(model.layers.len());
    for d in model.to_defs() {
        let values = d.op.blob_values();
        let offset = blob.len() as u64;
        for v in &values {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        records.push(LayerRecord {
            name: d.name,
            kind: d.op.kind(),
            params: d.op.params(),
            predecessors: d.predecessors,
            blob_offset: if values.is_empty() { 0 } else { offset },
            blob_len: 4 * values.len() as u64,
        });
    }
    let manifest = Manifest {
        name: model.name.clone(),
        layers: records,
        blob_sha256: sha256_hex(&blob),
        blob_file: blob_file.clone(),
    };
    write_file(&blob_path(path, &blob_file), &blob)?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_file(path, json.as_bytes())
}

pub fn load_model(path: &Path) -> Result<NetworkModel> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| XbarError::format(format!("{}: {e}", path.display())))?;
    let blob_path = blob_path(path, &manifest.blob_file);
    let blob = std::fs::read(&blob_path)?;
    let found = sha256_hex(&blob);
    if found != manifest.blob_sha256 {
        return Err(XbarError::Checksum {
            path: blob_path.display().to_string(),
            expected: manifest.blob_sha256,
            found,
        });
    }
    let defs = manifest
        .layers
        .into_iter()
        .map(|r| record_to_def(r, &blob))
        .collect::<Result<Vec<_>>>()?;
    NetworkModel::from_defs(manifest.name, defs)
}

fn params<T: for<'de> Deserialize<'de>>(r: &LayerRecord) -> Result<T> {
    let v = if r.params.is_null() { serde_json::json!({}) } else { r.params.clone() };
    serde_json::from_value(v).map_err(|e| XbarError::format(format!("layer {} params: {e}", r.name)))
}

fn floats(r: &LayerRecord, blob: &[u8], count: usize) -> Result<Vec<f64>> {
    if r.blob_len != 4 * count as u64 {
        return Err(XbarError::format(format!(
            "layer {} stores {} bytes, its shape needs {}",
            r.name,
            r.blob_len,
            4 * count
        )));
    }
    let start = r.blob_offset as usize;
    let end = start
        .checked_add(4 * count)
        .filter(|e| *e <= blob.len())
        .ok_or_else(|| XbarError::format(format!("layer {} reaches past the end of the blob", r.name)))?;
    Ok(blob[start..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn record_to_def(r: LayerRecord, blob: &[u8]) -> Result<LayerDef> {
    let no_weights = |r: &LayerRecord| {
        if r.blob_len != 0 {
            Err(XbarError::format(format!("layer {} carries no weights but has blob_len {}", r.name, r.blob_len)))
        } else {
            Ok(())
        }
    };
    let op = match r.kind {
        LayerKind::Input => {
            no_weights(&r)?;
            LayerOp::Input {
                shape: params::<InputParams>(&r)?.shape,
            }
        }
        LayerKind::Conv => {
            let p: ConvParams = params(&r)?;
            let shape = ConvShape {
                kernel_h: p.kernel_h,
                kernel_w: p.kernel_w,
                in_channels: p.in_channels,
                out_channels: p.out_channels,
                stride: p.stride,
                padding: p.padding,
            };
            shape.validate().map_err(|e| XbarError::format(format!("layer {}: {e}", r.name)))?;
            let m = Matrix::new(shape.unrolled_rows(), shape.out_channels, floats(&r, blob, shape.weight_count())?)?;
            LayerOp::Conv {
                spec: ConvSpec::from_unrolled(shape, &m)?,
                shortcut: p.shortcut,
            }
        }
        LayerKind::Fc => {
            let p: FcParams = params(&r)?;
            let shape = ConvShape::new(1, p.in_features, p.out_features, 1, 0);
            shape.validate().map_err(|e| XbarError::format(format!("layer {}: {e}", r.name)))?;
            let m = Matrix::new(p.in_features, p.out_features, floats(&r, blob, shape.weight_count())?)?;
            LayerOp::Fc {
                spec: ConvSpec::from_unrolled(shape, &m)?,
            }
        }
        LayerKind::Batchnorm => {
            let p: BatchnormParams = params(&r)?;
            let v = floats(&r, blob, 2 * p.channels)?;
            LayerOp::BatchNorm {
                scale: v[..p.channels].to_vec(),
                bias: v[p.channels..].to_vec(),
            }
        }
        kind => {
            no_weights(&r)?;
            let extra: serde_json::Map<String, Value> = params(&r)?;
            if let Some(k) = extra.keys().next() {
                return Err(XbarError::format(format!("layer {}: unexpected parameter {k}", r.name)));
            }
            match kind {
                LayerKind::Relu => LayerOp::Relu,
                LayerKind::GlobalAvgPool => LayerOp::GlobalAvgPool,
                LayerKind::Add => LayerOp::Add,
                _ => LayerOp::Softmax,
            }
        }
    };
    Ok(LayerDef {
        name: r.name,
        op,
        predecessors: r.predecessors,
    })
}
