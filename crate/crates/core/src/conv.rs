//! Dense mapping of convolutions onto crossbars.
//!
//! Each 3-D kernel becomes one crossbar column; the convolution window
//! slides over the input and every position is one crossbar evaluation.
//! Rows are ordered channel-major: row `c·kh·kw + r·kw + s` holds kernel
//! element `(r, s, c)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, XbarError};
use crate::matrix::Matrix;
use crate::report::ErrorRow;
use crate::vmm::VmmEngine;

/// A 3-D tensor in `(row, col, channel)` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(XbarError::contract(format!(
                "feature map data has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(XbarError::contract(format!("feature map holds non-finite value {v}")));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureMap {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, ch: usize) -> f64 {
        self.data[(r * self.width + c) * self.channels + ch]
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_non_negative(&self) -> bool {
        self.data.iter().all(|v| *v >= 0.0)
    }
}

/// Geometry of a convolution, without weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvShape {
    pub fn new(kernel: usize, in_channels: usize, out_channels: usize, stride: usize, padding: usize) -> Self {
        ConvShape {
            kernel_h: kernel,
            kernel_w: kernel,
            in_channels,
            out_channels,
            stride,
            padding,
        }
    }

    /// Crossbar rows used: `kernel_h·kernel_w·in_channels`.
    pub fn unrolled_rows(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels
    }

    pub fn weight_count(&self) -> usize {
        self.unrolled_rows() * self.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(XbarError::contract("convolution dimensions must be positive"));
        }
        if self.stride == 0 {
            return Err(XbarError::contract("stride must be positive"));
        }
        Ok(())
    }

    /// Output `(height, width)` for an input of `height × width`.
    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let span_h = height + 2 * self.padding;
        let span_w = width + 2 * self.padding;
        if span_h < self.kernel_h || span_w < self.kernel_w {
            return Err(XbarError::contract(format!(
                "{}x{} kernel does not fit a padded {span_h}x{span_w} input",
                self.kernel_h, self.kernel_w
            )));
        }
        Ok((
            (span_h - self.kernel_h) / self.stride + 1,
            (span_w - self.kernel_w) / self.stride + 1,
        ))
    }

    /// Unrolled row of kernel element `(r, s, c)`.
    #[inline]
    pub fn row_index(&self, r: usize, s: usize, c: usize) -> usize {
        (c * self.kernel_h + r) * self.kernel_w + s
    }
}

/// A convolution layer: geometry plus weights indexed `(kh, kw, in_c, out_c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub shape: ConvShape,
    pub weights: Vec<f64>,
}

impl ConvSpec {
    pub fn new(shape: ConvShape, weights: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if weights.len() != shape.weight_count() {
            return Err(XbarError::contract(format!(
                "kernel has {} weights, shape needs {}",
                weights.len(),
                shape.weight_count()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(XbarError::contract("kernel weights must be finite"));
        }
        Ok(ConvSpec { shape, weights })
    }

    /// Inverse of [`unroll_kernel`].
    pub fn from_unrolled(shape: ConvShape, m: &Matrix) -> Result<Self> {
        shape.validate()?;
        if m.rows != shape.unrolled_rows() || m.cols != shape.out_channels {
            return Err(XbarError::contract(format!(
                "unrolled kernel is {}x{}, shape needs {}x{}",
                m.rows,
                m.cols,
                shape.unrolled_rows(),
                shape.out_channels
            )));
        }
        let mut weights = vec![0.0; shape.weight_count()];
        for r in 0..shape.kernel_h {
            for s in 0..shape.kernel_w {
                for c in 0..shape.in_channels {
                    for o in 0..shape.out_channels {
                        weights[((r * shape.kernel_w + s) * shape.in_channels + c) * shape.out_channels + o] =
                            m.get(shape.row_index(r, s, c), o);
                    }
                }
            }
        }
        ConvSpec::new(shape, weights)
    }

    #[inline]
    pub fn weight(&self, r: usize, s: usize, c: usize, o: usize) -> f64 {
        let sh = &self.shape;
        self.weights[((r * sh.kernel_w + s) * sh.in_channels + c) * sh.out_channels + o]
    }
}

/// The `(kh·kw·in_c) × out_c` crossbar matrix of a kernel.
pub fn unroll_kernel(spec: &ConvSpec) -> Matrix {
    let sh = spec.shape;
    let mut m = Matrix::zeros(sh.unrolled_rows(), sh.out_channels);
    for r in 0..sh.kernel_h {
        for s in 0..sh.kernel_w {
            for c in 0..sh.in_channels {
                for o in 0..sh.out_channels {
                    m.set(sh.row_index(r, s, c), o, spec.weight(r, s, c, o));
                }
            }
        }
    }
    m
}

/// The input vector at output position `(oy, ox)`, zero outside the map.
pub fn window_at(fm: &FeatureMap, shape: &ConvShape, oy: usize, ox: usize) -> Vec<f64> {
    let mut v = vec![0.0; shape.unrolled_rows()];
    for r in 0..shape.kernel_h {
        let y = (oy * shape.stride + r) as isize - shape.padding as isize;
        if y < 0 || y >= fm.height as isize {
            continue;
        }
        for s in 0..shape.kernel_w {
            let x = (ox * shape.stride + s) as isize - shape.padding as isize;
            if x < 0 || x >= fm.width as isize {
                continue;
            }
            for c in 0..shape.in_channels {
                v[shape.row_index(r, s, c)] = fm.get(y as usize, x as usize, c);
            }
        }
    }
    v
}

/// All window vectors in raster order of the output positions.
pub fn window_stream(fm: &FeatureMap, shape: &ConvShape) -> Result<Vec<Vec<f64>>> {
    if fm.channels != shape.in_channels {
        return Err(XbarError::contract(format!(
            "input has {} channels, kernel expects {}",
            fm.channels, shape.in_channels
        )));
    }
    let (oh, ow) = shape.output_dims(fm.height, fm.width)?;
    Ok((0..oh * ow)
        .map(|p| window_at(fm, shape, p / ow, p % ow))
        .collect())
}

/// Result of running one convolution on a crossbar.
#[derive(Debug, Clone)]
pub struct ConvOutput {
    pub output: FeatureMap,
    /// Exact outputs for the same windows, when requested.
    pub ideal: Option<FeatureMap>,
    /// One row per output element, when requested.
    pub rows: Option<Vec<ErrorRow>>,
}

/// Runs `spec` through `engine` window by window.
///
/// With `reference = Some(layer)`, the exact product of each window with
/// the unrolled kernel is computed alongside and error rows tagged with
/// `layer` are produced.
pub fn conv_execute(engine: &VmmEngine, fm: &FeatureMap, spec: &ConvSpec, reference: Option<&str>) -> Result<ConvOutput> {
    let sh = spec.shape;
    if engine.input_len() != sh.unrolled_rows() || engine.output_len() != sh.out_channels {
        return Err(XbarError::contract(format!(
            "engine computes {}x{}, kernel unrolls to {}x{}",
            engine.input_len(),
            engine.output_len(),
            sh.unrolled_rows(),
            sh.out_channels
        )));
    }
    let windows = window_stream(fm, &sh)?;
    let (oh, ow) = sh.output_dims(fm.height, fm.width)?;
    let actual: Vec<f64> = windows
        .par_iter()
        .map(|w| engine.execute(w))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let output = FeatureMap::new(oh, ow, sh.out_channels, actual)?;

    let Some(layer) = reference else {
        return Ok(ConvOutput {
            output,
            ideal: None,
            rows: None,
        });
    };
    let a = unroll_kernel(spec);
    let ideal_data: Vec<f64> = windows.iter().flat_map(|w| a.vec_mul(w)).collect();
    let ideal = FeatureMap::new(oh, ow, sh.out_channels, ideal_data)?;
    let rows = ErrorRow::for_layer(layer, &output.data, &ideal.data, sh.out_channels)?;
    Ok(ConvOutput {
        output,
        ideal: Some(ideal),
        rows: Some(rows),
    })
}

/// Exact convolution through the unrolled matrix, for the software path.
pub fn conv_exact(fm: &FeatureMap, spec: &ConvSpec) -> Result<FeatureMap> {
    let sh = spec.shape;
    let a = unroll_kernel(spec);
    let windows = window_stream(fm, &sh)?;
    let (oh, ow) = sh.output_dims(fm.height, fm.width)?;
    let data: Vec<f64> = windows.par_iter().flat_map_iter(|w| a.vec_mul(w)).collect();
    FeatureMap::new(oh, ow, sh.out_channels, data)
}

/// One row of a dense-mapping layer table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGeometry {
    pub name: String,
    pub shape: ConvShape,
    /// `(height, width)` of the layer input.
    pub input: (usize, usize),
    /// Shortcut layers run alongside the main path.
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationCount {
    pub name: String,
    /// Unrolled crossbar size `(rows, cols)`.
    pub crossbar: (usize, usize),
    pub iterations: usize,
    pub parallel: bool,
}

/// Crossbar evaluations per classification for each layer, and the
/// sequential total (parallel shortcut layers excluded).
pub fn iteration_count(table: &[LayerGeometry]) -> Result<(Vec<IterationCount>, usize)> {
    let mut rows = Vec::with_capacity(table.len());
    let mut total = 0;
    for l in table {
        let (oh, ow) = l.shape.output_dims(l.input.0, l.input.1)?;
        let iterations = oh * ow;
        if !l.parallel {
            total += iterations;
        }
        rows.push(IterationCount {
            name: l.name.clone(),
            crossbar: (l.shape.unrolled_rows(), l.shape.out_channels),
            iterations,
            parallel: l.parallel,
        });
    }
    Ok((rows, total))
}

/// Weight-bearing layers of ResNet-20 for 32×32×3 inputs, in execution
/// order. Stage boundaries downsample with stride 2; shortcuts `Sum1..3`
/// are 1×1 projections; the classifier sees the globally pooled 1×1×64 map.
pub fn resnet20_layers() -> Vec<LayerGeometry> {
    let conv = |name: String, k, cin, cout, stride, pad, input| LayerGeometry {
        name,
        shape: ConvShape::new(k, cin, cout, stride, pad),
        input,
        parallel: false,
    };
    let mut t = vec![conv("Conv0".into(), 3, 3, 16, 1, 1, (32, 32))];
    for i in 1..=6 {
        t.push(conv(format!("Conv{i}"), 3, 16, 16, 1, 1, (32, 32)));
        if i == 2 {
            t.push(LayerGeometry {
                parallel: true,
                ..conv("Sum1".into(), 1, 16, 16, 1, 0, (32, 32))
            });
        }
    }
    t.push(conv("Conv7".into(), 3, 16, 32, 2, 1, (32, 32)));
    t.push(conv("Conv8".into(), 3, 32, 32, 1, 1, (16, 16)));
    t.push(LayerGeometry {
        parallel: true,
        ..conv("Sum2".into(), 1, 16, 32, 2, 0, (32, 32))
    });
    for i in 9..=12 {
        t.push(conv(format!("Conv{i}"), 3, 32, 32, 1, 1, (16, 16)));
    }
    t.push(conv("Conv13".into(), 3, 32, 64, 2, 1, (16, 16)));
    t.push(conv("Conv14".into(), 3, 64, 64, 1, 1, (8, 8)));
    t.push(LayerGeometry {
        parallel: true,
        ..conv("Sum3".into(), 1, 32, 64, 2, 0, (16, 16))
    });
    for i in 15..=18 {
        t.push(conv(format!("Conv{i}"), 3, 64, 64, 1, 1, (8, 8)));
    }
    t.push(conv("FC".into(), 1, 64, 10, 1, 0, (1, 1)));
    t
}
