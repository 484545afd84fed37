//! Numeric plumbing shared by the encoder and the scoring heads: a dense
//! row-major matrix, parameter initialization, and an Adam optimizer.
//!
//! All arithmetic is `f64` so gradients can be checked against central
//! finite differences at tight tolerances.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Dense row-major matrix. `data[r * cols + c]` is row `r`, column `c`.
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

    /// Xavier/Glorot uniform initialization: U(-a, a) with
    /// a = sqrt(6 / (rows + cols)).
    pub fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
        Mat { rows, cols, data }
    }

    /// Uniform initialization U(-a, a); used for embedding tables where a
    /// fixed scale works better than fan-based scaling.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, a: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// out = W x + b, where self is (rows × cols), x has len cols,
    /// out has len rows. `b` may be empty to skip the bias.
    pub fn matvec(&self, x: &[f64], b: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = if b.is_empty() { 0.0 } else { b[r] };
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            out[r] = acc;
        }
    }

    /// out += Wᵀ g: accumulates the input-side gradient of `matvec`.
    pub fn matvec_backward_input(&self, g: &[f64], out: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for r in 0..self.rows {
            let row = self.row(r);
            let gr = g[r];
            if gr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gr;
            }
        }
    }
}

/// dW += g ⊗ x and db += g: the parameter-side gradient of `matvec`.
pub fn accumulate_outer(dw: &mut Mat, db: &mut [f64], g: &[f64], x: &[f64]) {
    debug_assert_eq!(g.len(), dw.rows);
    debug_assert_eq!(x.len(), dw.cols);
    for r in 0..dw.rows {
        let gr = g[r];
        if !db.is_empty() {
            db[r] += gr;
        }
        if gr == 0.0 {
            continue;
        }
        let row = dw.row_mut(r);
        for (w, xv) in row.iter_mut().zip(x) {
            *w += gr * xv;
        }
    }
}

/// Numerically stable softmax over a slice, in place.
pub fn softmax_inplace(xs: &mut [f64]) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Smooth GELU (tanh approximation). Smoothness keeps central finite
/// differences well-behaved everywhere, unlike ReLU's kink at zero.
#[inline]
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Exact derivative of the tanh-approximation GELU above.
#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// Adam optimizer over a flat list of parameter tensors.
///
/// The caller passes parameters and gradients as parallel slices in a fixed
/// order; first/second-moment state is kept per tensor by position.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update step. `params[i]` and `grads[i]` must have equal lengths,
    /// and the tensor layout must be identical on every call.
    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[&Vec<f64>]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient tensor count mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer state does not match parameter layout");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.len(), g.len(), "parameter/gradient length mismatch");
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
