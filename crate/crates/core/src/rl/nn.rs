//! Tanh MLP actor-critic with a diagonal Gaussian head and hand-written
//! reverse-mode gradients.
//!
//! All parameters live in one flat vector so the optimizer, checkpoints and
//! freeze checksums can treat a network as a plain slice. Layout:
//! `W1 b1 W2 b2 Wmu bmu Wv bv log_std`, weights row-major `(out, in)`.

use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::RlError;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wmu: usize,
    bmu: usize,
    wv: usize,
    bv: usize,
    log_std: usize,
    len: usize,
}

impl Layout {
    fn new(i: usize, h: usize, o: usize) -> Self {
        let w1 = 0;
        let b1 = w1 + h * i;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let wmu = b2 + h;
        let bmu = wmu + o * h;
        let wv = bmu + o;
        let bv = wv + h;
        let log_std = bv + 1;
        Self { w1, b1, w2, b2, wmu, bmu, wv, bv, log_std, len: log_std + o }
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: f64,
    pub cache: ForwardCache,
}

fn dense(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, y) in out.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *y = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl PolicyNet {
    pub fn num_params(in_dim: usize, hidden: usize, out_dim: usize) -> usize {
        Layout::new(in_dim, hidden, out_dim).len
    }

    pub fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Self { in_dim, hidden, out_dim, params: vec![0.0; Self::num_params(in_dim, hidden, out_dim)] }
    }

    /// LeCun-normal hidden layers, a near-zero mean head and a constant
    /// initial log-std.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, hidden: usize, out_dim: usize, init_log_std: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(in_dim, hidden, out_dim);
        let l = net.layout();
        let mut fill = |range: std::ops::Range<usize>, scale: f64, rng: &mut R| {
            for p in &mut net.params[range] {
                *p = scale * rng.sample::<f64, _>(StandardNormal);
            }
        };
        fill(l.w1..l.b1, (1.0 / in_dim as f64).sqrt(), rng);
        fill(l.w2..l.b2, (1.0 / hidden as f64).sqrt(), rng);
        fill(l.wmu..l.bmu, 0.01 * (1.0 / hidden as f64).sqrt(), rng);
        fill(l.wv..l.bv, (1.0 / hidden as f64).sqrt(), rng);
        for p in &mut net.params[l.log_std..l.len] {
            *p = init_log_std;
        }
        net
    }

    fn layout(&self) -> Layout {
        Layout::new(self.in_dim, self.hidden, self.out_dim)
    }

    pub fn log_std(&self) -> &[f64] {
        let l = self.layout();
        &self.params[l.log_std..l.len]
    }

    /// Bias of the action-mean head.
    pub fn mean_bias_mut(&mut self) -> &mut [f64] {
        let l = self.layout();
        &mut self.params[l.bmu..l.wv]
    }

    pub fn forward(&self, obs: &[f64]) -> Result<Forward, RlError> {
        if obs.len() != self.in_dim {
            return Err(RlError::ShapeMismatch { expected: self.in_dim, got: obs.len() });
        }
        let l = self.layout();
        let p = &self.params;
        let h = self.hidden;
        let mut h1 = vec![0.0; h];
        dense(&p[l.w1..l.b1], &p[l.b1..l.w2], obs, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut h2 = vec![0.0; h];
        dense(&p[l.w2..l.b2], &p[l.b2..l.wmu], &h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        let mut mean = vec![0.0; self.out_dim];
        dense(&p[l.wmu..l.bmu], &p[l.bmu..l.wv], &h2, &mut mean);
        let mut value = [0.0];
        dense(&p[l.wv..l.bv], &p[l.bv..l.log_std], &h2, &mut value);
        Ok(Forward {
            mean,
            log_std: p[l.log_std..l.len].to_vec(),
            value: value[0],
            cache: ForwardCache { input: obs.to_vec(), h1, h2 },
        })
    }

    pub fn forward_batch(&self, obs: &[Vec<f64>]) -> Result<Vec<Forward>, RlError> {
        obs.iter().map(|o| self.forward(o)).collect()
    }

    /// Accumulates parameter gradients into `grad` given upstream
    /// gradients for the mean, log-std and value outputs.
    pub fn backward(&self, cache: &ForwardCache, d_mean: &[f64], d_log_std: &[f64], d_value: f64, grad: &mut [f64]) {
        let l = self.layout();
        let p = &self.params;
        let (h, n_in, n_out) = (self.hidden, self.in_dim, self.out_dim);

        let mut d_h2 = vec![0.0; h];
        for o in 0..n_out {
            let g = d_mean[o];
            if g == 0.0 {
                continue;
            }
            grad[l.bmu + o] += g;
            let row = l.wmu + o * h;
            for j in 0..h {
                grad[row + j] += g * cache.h2[j];
                d_h2[j] += g * p[row + j];
            }
        }
        if d_value != 0.0 {
            grad[l.bv] += d_value;
            for j in 0..h {
                grad[l.wv + j] += d_value * cache.h2[j];
                d_h2[j] += d_value * p[l.wv + j];
            }
        }
        for (o, g) in d_log_std.iter().enumerate() {
            grad[l.log_std + o] += g;
        }

        let d_z2: Vec<f64> = d_h2.iter().zip(&cache.h2).map(|(d, a)| d * (1.0 - a * a)).collect();
        let mut d_h1 = vec![0.0; h];
        for (o, &g) in d_z2.iter().enumerate() {
            grad[l.b2 + o] += g;
            let row = l.w2 + o * h;
            for j in 0..h {
                grad[row + j] += g * cache.h1[j];
                d_h1[j] += g * p[row + j];
            }
        }
        let d_z1: Vec<f64> = d_h1.iter().zip(&cache.h1).map(|(d, a)| d * (1.0 - a * a)).collect();
        for (o, &g) in d_z1.iter().enumerate() {
            grad[l.b1 + o] += g;
            let row = l.w1 + o * n_in;
            for j in 0..n_in {
                grad[row + j] += g * cache.input[j];
            }
        }
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Diagonal Gaussian log-density.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, s), a)| {
            let z = (a - m) / s.exp();
            -0.5 * z * z - s - 0.5 * LN_2PI
        })
        .sum()
}

/// Gradients of the log-density with respect to mean and log-std.
pub fn gaussian_log_prob_grad(mean: &[f64], log_std: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut dm = Vec::with_capacity(mean.len());
    let mut ds = Vec::with_capacity(mean.len());
    for ((m, s), a) in mean.iter().zip(log_std).zip(action) {
        let sigma = s.exp();
        let z = (a - m) / sigma;
        dm.push(z / sigma);
        ds.push(z * z - 1.0);
    }
    (dm, ds)
}

/// Entropy of a diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| s + 0.5 * (LN_2PI + 1.0)).sum()
}

pub fn sample_gaussian<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> Vec<f64> {
    mean.iter()
        .zip(log_std)
        .map(|(m, s)| m + s.exp() * rng.sample::<f64, _>(StandardNormal))
        .collect()
}
