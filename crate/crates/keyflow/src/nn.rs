//! Minimal dense-network primitives with explicit backward passes.
//!
//! Everything is f64 and allocation-happy; model sizes here are small
//! enough that clarity wins over fused kernels. Gradients are exact for
//! the forward as written, which the finite-difference checks rely on.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn silu_arr(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(silu)
}

pub fn silu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = x.mapv(silu_grad);
    dx *= dy;
    dx
}

/// Fully connected layer, `y = x @ w + b`, with `w: (in, out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn xavier(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (d_in + d_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid uniform bounds");
        let w = Array2::from_shape_fn((d_in, d_out), |_| dist.sample(rng));
        Linear {
            w,
            b: Array1::zeros(d_out),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear {
            w: Array2::zeros((d_in, d_out)),
            b: Array1::zeros(d_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns dL/dx.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Row-wise layer normalization without learned affine parameters.
/// Returns the normalized rows plus the cache needed for backward.
pub fn layer_norm(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut y = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (i, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| v * is);
        inv_std[i] = is;
    }
    (y, inv_std)
}

pub fn layer_norm_backward(
    y: &Array2<f64>,
    inv_std: &Array1<f64>,
    dy: &Array2<f64>,
) -> Array2<f64> {
    let d = y.ncols() as f64;
    let mut dx = Array2::zeros(y.raw_dim());
    for i in 0..y.nrows() {
        let yr = y.row(i);
        let dyr = dy.row(i);
        let mean_dy = dyr.sum() / d;
        let mean_dy_y = yr.iter().zip(dyr.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        let is = inv_std[i];
        for j in 0..y.ncols() {
            dx[[i, j]] = is * (dyr[j] - mean_dy - yr[j] * mean_dy_y);
        }
    }
    dx
}

/// Row-wise softmax.
pub fn softmax(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    y
}

pub fn softmax_backward(a: &Array2<f64>, da: &Array2<f64>) -> Array2<f64> {
    let mut ds = Array2::zeros(a.raw_dim());
    for i in 0..a.nrows() {
        let dot = a
            .row(i)
            .iter()
            .zip(da.row(i).iter())
            .map(|(x, y)| x * y)
            .sum::<f64>();
        for j in 0..a.ncols() {
            ds[[i, j]] = a[[i, j]] * (da[[i, j]] - dot);
        }
    }
    ds
}

pub fn standard_normal_array(shape: (usize, usize), rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| StandardNormal.sample(rng))
}

/// Decoupled-weight-decay Adam over an ordered list of parameter slices.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        AdamW {
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            debug_assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * p[i]);
            }
        }
    }
}

/// Cosine decay from `lr0` to zero over `total` steps.
pub fn cosine_lr(lr0: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = (step as f64 / total as f64).min(1.0);
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}
