use crate::error::{Result, XbarError};

/// Symmetric positive-definite band matrix and its in-place Cholesky factor.
///
/// Row `k` keeps the lower-triangle entries `A[k][k-bw ..= k]` contiguously,
/// column `m` living at offset `m + bw - k` (the diagonal is at `bw`).
#[derive(Debug, Clone)]
pub(crate) struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
    factored: bool,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let bw = bw.min(n.saturating_sub(1));
        BandMatrix {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
            factored: false,
        }
    }

    #[inline]
    fn at(&self, k: usize, m: usize) -> usize {
        debug_assert!(m <= k && k - m <= self.bw);
        k * (self.bw + 1) + m + self.bw - k
    }

    pub fn add_diag(&mut self, k: usize, value: f64) {
        let at = self.at(k, k);
        self.data[at] += value;
    }

    /// Stamps a conductance between unknowns `a` and `b`.
    pub fn stamp(&mut self, a: usize, b: usize, g: f64) {
        let (hi, lo) = if a > b { (a, b) } else { (b, a) };
        self.add_diag(a, g);
        self.add_diag(b, g);
        let at = self.at(hi, lo);
        self.data[at] -= g;
    }

    /// Cholesky factorization `A = L·Lᵀ`, overwriting the band with `L`.
    pub fn factor(&mut self) -> Result<()> {
        let (n, bw) = (self.n, self.bw);
        let stride = bw + 1;
        for k in 0..n {
            let lo = k.saturating_sub(bw);
            for j in lo..=k {
                let len = j - lo;
                let row_k = k * stride + lo + bw - k;
                let row_j = j * stride + lo + bw - j;
                let dot = dot(&self.data[row_k..row_k + len], &self.data[row_j..row_j + len]);
                let at = row_k + len;
                let s = self.data[at] - dot;
                if j == k {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(XbarError::Singular(format!(
                            "non-positive pivot {s:e} at unknown {k}"
                        )));
                    }
                    self.data[at] = s.sqrt();
                } else {
                    let djj = self.data[j * stride + bw];
                    self.data[at] = s / djj;
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solves `L·Lᵀ·x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        debug_assert!(self.factored);
        let (n, bw) = (self.n, self.bw);
        let stride = bw + 1;
        for k in 0..n {
            let lo = k.saturating_sub(bw);
            let row = k * stride + lo + bw - k;
            let s = x[k] - dot(&self.data[row..row + (k - lo)], &x[lo..k]);
            x[k] = s / self.data[k * stride + bw];
        }
        for k in (0..n).rev() {
            let hi = (k + bw).min(n - 1);
            let mut s = x[k];
            for m in k + 1..=hi {
                s -= self.data[m * stride + k + bw - m] * x[m];
            }
            x[k] = s / self.data[k * stride + bw];
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators; fixed order keeps results reproducible.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
