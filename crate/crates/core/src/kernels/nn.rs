//! Pointwise activations, layer normalization and the softmax head.

use crate::error::{Error, Result};

/// `log(1 + e^x)` without overflow. Always positive for finite `x`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`].
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Statistics kept from a layer-norm forward pass for the backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNormStats {
    pub mean: f64,
    pub inv_std: f64,
}

/// Normalizes `x` over its length, writing into `out`.
pub fn layer_norm_into(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64, out: &mut [f64]) -> LayerNormStats {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * inv_std * gamma[i] + beta[i];
    }
    LayerNormStats { mean, inv_std }
}

pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    layer_norm_into(x, gamma, beta, eps, &mut out);
    out
}

/// Backward pass of [`layer_norm_into`]. Accumulates into `g_x`, `g_gamma`
/// and `g_beta`.
pub fn layer_norm_backward(
    x: &[f64],
    gamma: &[f64],
    stats: LayerNormStats,
    g_out: &[f64],
    g_x: &mut [f64],
    g_gamma: &mut [f64],
    g_beta: &mut [f64],
) {
    let n = x.len();
    let mut sum_g = 0.0;
    let mut sum_g_xhat = 0.0;
    for i in 0..n {
        let xhat = (x[i] - stats.mean) * stats.inv_std;
        let g = g_out[i] * gamma[i];
        g_gamma[i] += g_out[i] * xhat;
        g_beta[i] += g_out[i];
        sum_g += g;
        sum_g_xhat += g * xhat;
    }
    let nf = n as f64;
    for i in 0..n {
        let xhat = (x[i] - stats.mean) * stats.inv_std;
        let g = g_out[i] * gamma[i];
        g_x[i] += stats.inv_std * (g - sum_g / nf - xhat * sum_g_xhat / nf);
    }
}

/// Numerically stable `-log softmax(logits)[target]` and its gradient
/// `softmax(logits) - onehot(target)`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::Index {
            index: target,
            bound: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = grad.iter().sum();
    let log_z = max + sum.ln();
    for g in &mut grad {
        *g /= sum;
    }
    grad[target] -= 1.0;
    Ok((log_z - logits[target], grad))
}
