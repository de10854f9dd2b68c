//! Dense math kernels for the neural engine: a minimal row-major matrix,
//! stable softmax variants, and the shallow aggregation unit that all
//! message passing in this crate reduces to.

use serde::{Deserialize, Serialize};

/// A dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn shape_ok(&self) -> bool {
        self.data.len() == self.rows * self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                let row = &self.data[r * self.cols..(r + 1) * self.cols];
                row.iter().zip(x).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// `selfᵀ · y`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * yr;
            }
        }
        out
    }

    /// Rank-one accumulation `self += y ⊗ x` (gradient of `matvec` w.r.t.
    /// the matrix).
    pub fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (a, &xc) in row.iter_mut().zip(x) {
                *a += yr * xc;
            }
        }
    }
}

/// Element-wise `max(0, x)`.
pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// `x + y` element-wise, in place on `x`.
pub fn axpy(x: &mut [f64], scale: f64, y: &[f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (a, &b) in x.iter_mut().zip(y) {
        *a += scale * b;
    }
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln Σ exp`, max-subtracted.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// One unit of a shallow aggregation network: a gain, an input weight
/// vector, and a bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShallowUnit {
    pub gain: f64,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ShallowUnit {
    /// A unit that reads out one input coordinate unchanged.
    pub fn copy(position: usize, input_len: usize) -> Self {
        let mut weights = vec![0.0; input_len];
        weights[position] = 1.0;
        ShallowUnit { gain: 1.0, weights, bias: 0.0 }
    }

    /// A unit that sums a set of input coordinates.
    pub fn sum(positions: &[usize], input_len: usize) -> Self {
        let mut weights = vec![0.0; input_len];
        for &p in positions {
            weights[p] = 1.0;
        }
        ShallowUnit { gain: 1.0, weights, bias: 0.0 }
    }
}

/// The shallow aggregation network: a rectified sum of gained linear
/// functionals of the input, `ReLU(Σ_k gain_k·⟨weights_k, inputs⟩ + bias_k)`.
/// With gain 1, a one-hot weight vector, and bias 0 this copies a
/// non-negative input coordinate exactly; with several one-hot positions it
/// sums them — the two building blocks every hand-set message-passing
/// program here is made of.
pub fn shallow_agg(inputs: &[f64], units: &[ShallowUnit]) -> f64 {
    let pre: f64 = units
        .iter()
        .map(|u| u.gain * dot(&u.weights, inputs) + u.bias)
        .sum();
    pre.max(0.0)
}
