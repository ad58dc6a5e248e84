//! MTEN tensor files: magic `MTEN`, version, rank and dims as little-endian
//! `u32`, then little-endian `f32` data in row-major order.

use std::path::Path;

use crate::conv::FeatureMap;
use crate::error::{Result, XbarError};
use crate::report::write_file;

pub const TENSOR_MAGIC: &[u8; 4] = b"MTEN";
pub const TENSOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(XbarError::format(format!(
                "tensor dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(12 + 4 * self.dims.len() + 4 * self.data.len());
        b.extend_from_slice(TENSOR_MAGIC);
        b.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            b.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != TENSOR_MAGIC {
            return Err(XbarError::format("not an MTEN tensor file"));
        }
        let version = r.u32()?;
        if version != TENSOR_VERSION {
            return Err(XbarError::format(format!("unsupported MTEN version {version}")));
        }
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| XbarError::format("tensor dims overflow"))?;
        let payload = r.take(count.checked_mul(4).ok_or_else(|| XbarError::format("tensor too large"))?)?;
        if r.pos != bytes.len() {
            return Err(XbarError::format(format!(
                "{} trailing bytes after tensor data",
                bytes.len() - r.pos
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Tensor { dims, data })
    }

    /// Images from a `(H, W, C)` or `(N, H, W, C)` tensor.
    pub fn to_images(&self) -> Result<Vec<FeatureMap>> {
        let (n, h, w, c) = match self.dims[..] {
            [h, w, c] => (1, h, w, c),
            [n, h, w, c] => (n, h, w, c),
            _ => {
                return Err(XbarError::format(format!(
                    "images need rank 3 or 4, got dims {:?}",
                    self.dims
                )))
            }
        };
        let per = h * w * c;
        (0..n)
            .map(|k| {
                let data = self.data[k * per..(k + 1) * per].iter().map(|v| *v as f64).collect();
                FeatureMap::new(h, w, c, data)
            })
            .collect()
    }

    pub fn from_images(images: &[FeatureMap]) -> Result<Self> {
        let Some(first) = images.first() else {
            return Tensor::new(vec![0, 0, 0, 0], Vec::new());
        };
        if images.iter().any(|im| im.shape() != first.shape()) {
            return Err(XbarError::contract("images differ in shape"));
        }
        let data = images.iter().flat_map(|im| im.data.iter().map(|v| *v as f32)).collect();
        Tensor::new(vec![images.len(), first.height, first.width, first.channels], data)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let Some(end) = end else {
            return Err(XbarError::format("tensor file is truncated"));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    Tensor::from_bytes(&std::fs::read(path)?)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_file(path, &t.to_bytes())
}

/// Labels stored as a rank-1 tensor of class indices.
pub fn labels_from_tensor(t: &Tensor) -> Result<Vec<usize>> {
    if t.dims.len() != 1 {
        return Err(XbarError::format("labels must be a rank-1 tensor"));
    }
    t.data
        .iter()
        .map(|v| {
            if *v >= 0.0 && v.fract() == 0.0 {
                Ok(*v as usize)
            } else {
                Err(XbarError::format(format!("label {v} is not a class index")))
            }
        })
        .collect()
}
