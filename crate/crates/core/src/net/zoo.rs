//! Model builders with seeded random weights, and synthetic images.

use super::model::{LayerDef, LayerOp, NetworkModel};
use crate::conv::{ConvShape, ConvSpec, FeatureMap};
use crate::error::Result;
use crate::metrics::{gen_kernel, gen_values, KernelType};

/// Gaussian kernel scaled by `sqrt(2 / fan_in)`, rounded to `f32` so the
/// model survives a save/load round trip unchanged.
fn he_kernel(shape: ConvShape, seed: u64) -> Result<ConvSpec> {
    let raw = gen_kernel(
        KernelType::Gaussian,
        [shape.kernel_h, shape.kernel_w, shape.in_channels, shape.out_channels],
        seed,
    );
    let s = (2.0 / shape.unrolled_rows() as f64).sqrt();
    ConvSpec::new(shape, raw.into_iter().map(|w| (w * s) as f32 as f64).collect())
}

struct Builder {
    defs: Vec<LayerDef>,
    seed: u64,
}

impl Builder {
    fn push(&mut self, name: &str, op: LayerOp, preds: &[&str]) -> String {
        self.defs.push(LayerDef::new(name, op, preds));
        name.to_string()
    }

    fn conv(&mut self, name: &str, shape: ConvShape, shortcut: bool, pred: &str) -> Result<String> {
        self.seed += 1;
        let spec = he_kernel(shape, self.seed)?;
        Ok(self.push(name, LayerOp::Conv { spec, shortcut }, &[pred]))
    }

    fn bn(&mut self, name: &str, channels: usize, pred: &str) -> String {
        self.push(
            name,
            LayerOp::BatchNorm {
                scale: vec![1.0; channels],
                bias: vec![0.0; channels],
            },
            &[pred],
        )
    }

    fn relu(&mut self, name: &str, pred: &str) -> String {
        self.push(name, LayerOp::Relu, &[pred])
    }

    fn head(mut self, name: &str, channels: usize, classes: usize, pred: &str) -> Result<NetworkModel> {
        let gap = self.push("GAP", LayerOp::GlobalAvgPool, &[pred]);
        self.seed += 1;
        let spec = he_kernel(ConvShape::new(1, channels, classes, 1, 0), self.seed)?;
        let fc = self.push("FC", LayerOp::Fc { spec }, &[&gap]);
        self.push("Softmax", LayerOp::Softmax, &[&fc]);
        NetworkModel::from_defs(name, self.defs)
    }
}

/// Three 3×3 convolutions with ReLU (the middle one downsampling),
/// global average pooling and a classifier.
pub fn tiny_cnn(input: [usize; 3], classes: usize, seed: u64) -> Result<NetworkModel> {
    let mut b = Builder {
        defs: Vec::new(),
        seed: seed.wrapping_mul(1000),
    };
    let x = b.push("input", LayerOp::Input { shape: input }, &[]);
    let c = b.conv("Conv0", ConvShape::new(3, input[2], 8, 1, 1), false, &x)?;
    let x = b.relu("ReLU0", &c);
    let c = b.conv("Conv1", ConvShape::new(3, 8, 8, 2, 1), false, &x)?;
    let x = b.relu("ReLU1", &c);
    let c = b.conv("Conv2", ConvShape::new(3, 8, 16, 1, 1), false, &x)?;
    let x = b.relu("ReLU2", &c);
    b.head("tiny-cnn", 16, classes, &x)
}

/// ResNet-20 for 32×32×3 inputs, laid out as the dense-mapping table:
/// Conv0, nine basic blocks (Conv1..Conv18) with 1×1 projection shortcuts
/// Sum1..Sum3 on the first block of each stage, pooling and FC.
/// Batch norms are identities.
pub fn resnet20(seed: u64) -> Result<NetworkModel> {
    let mut b = Builder {
        defs: Vec::new(),
        seed: seed.wrapping_mul(1000),
    };
    let x = b.push("input", LayerOp::Input { shape: [32, 32, 3] }, &[]);
    let c = b.conv("Conv0", ConvShape::new(3, 3, 16, 1, 1), false, &x)?;
    let n = b.bn("BN0", 16, &c);
    let mut x = b.relu("ReLU0", &n);

    let mut conv = 1;
    for (stage, (cin, cout)) in [(16, 16), (16, 32), (32, 64)].into_iter().enumerate() {
        for block in 0..3 {
            let first = block == 0;
            let (inc, stride) = if first { (cin, if stage == 0 { 1 } else { 2 }) } else { (cout, 1) };
            let a = b.conv(&format!("Conv{conv}"), ConvShape::new(3, inc, cout, stride, 1), false, &x)?;
            let a = b.bn(&format!("BN{conv}"), cout, &a);
            let a = b.relu(&format!("ReLU{conv}"), &a);
            let m = b.conv(&format!("Conv{}", conv + 1), ConvShape::new(3, cout, cout, 1, 1), false, &a)?;
            let m = b.bn(&format!("BN{}", conv + 1), cout, &m);
            let short = if first {
                b.conv(&format!("Sum{}", stage + 1), ConvShape::new(1, inc, cout, stride, 0), true, &x)?
            } else {
                x.clone()
            };
            let s = b.push(&format!("Add{}", conv + 1), LayerOp::Add, &[&m, &short]);
            x = b.relu(&format!("ReLU{}", conv + 1), &s);
            conv += 2;
        }
    }
    b.head("resnet20", 64, 10, &x)
}

/// `n` images with values uniform in `(0, 1]`.
pub fn synthetic_images(n: usize, shape: [usize; 3], seed: u64) -> Result<Vec<FeatureMap>> {
    let [h, w, c] = shape;
    (0..n)
        .map(|k| {
            let data = gen_values(h * w * c, 0.0, seed.wrapping_mul(7919).wrapping_add(k as u64))?
                .into_iter()
                .map(|v| v as f32 as f64)
                .collect();
            FeatureMap::new(h, w, c, data)
        })
        .collect()
}
