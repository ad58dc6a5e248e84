//! Digital layers. All exact, all shape-checked.

use crate::conv::FeatureMap;
use crate::error::{Result, XbarError};

pub fn relu(x: &FeatureMap) -> FeatureMap {
    FeatureMap {
        data: x.data.iter().map(|v| v.max(0.0)).collect(),
        ..x.clone()
    }
}

/// Inference-time batch norm: `y = scale[c]·x + bias[c]`.
pub fn batchnorm_affine(x: &FeatureMap, scale: &[f64], bias: &[f64]) -> Result<FeatureMap> {
    if scale.len() != x.channels || bias.len() != x.channels {
        return Err(XbarError::contract(format!(
            "batch norm has {}/{} parameters for {} channels",
            scale.len(),
            bias.len(),
            x.channels
        )));
    }
    let data = x
        .data
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let c = k % x.channels;
            scale[c] * v + bias[c]
        })
        .collect();
    Ok(FeatureMap { data, ..x.clone() })
}

/// Mean over the spatial dimensions, giving a `1 × 1 × C` map.
pub fn global_avg_pool(x: &FeatureMap) -> Result<FeatureMap> {
    let n = x.height * x.width;
    if n == 0 {
        return Err(XbarError::contract("cannot pool an empty feature map"));
    }
    let mut sum = vec![0.0; x.channels];
    for px in x.data.chunks_exact(x.channels) {
        for (s, v) in sum.iter_mut().zip(px) {
            *s += v;
        }
    }
    let data = sum.into_iter().map(|s| s / n as f64).collect();
    FeatureMap::new(1, 1, x.channels, data)
}

pub fn shortcut_add(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if a.shape() != b.shape() {
        return Err(XbarError::contract(format!(
            "cannot add {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(FeatureMap { data, ..a.clone() })
}

/// Max-subtracted softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = k;
        }
    }
    best
}
