//! Relation-aware (selective) SSM layer.
//!
//! `B`, `C` and the step `Δ` are functions of the input at each position:
//!
//! ```text
//! Δ_l[d] = softplus(delta_bias[d] + w_delta · x_l)
//! B_l    = W_B x_l,  C_l = W_C x_l                       (both length P)
//! h_l[d][p] = exp(Δ_l[d] A[d][p]) h_{l-1}[d][p] + (exp(Δ A) - 1)/A · B_l[p] x_l[d]
//! y_l[d] = Σ_p C_l[p] h_l[d][p]
//! ```
//!
//! with `A = -exp(a_log) < 0`, so every step is contracting.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernels::nn::{sigmoid, softplus, softplus_inverse};
use crate::kernels::scan::{ScanElement, ScanMode};
use crate::kernels::zoh::{zoh_coeffs_real, zoh_coeffs_real_vjp};
use crate::params::{join, ParamSet};

#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveParams {
    pub dim: usize,
    pub n_states: usize,
    /// `dim × n_states`; `A = -exp(a_log)`.
    pub a_log: Vec<f64>,
    /// `n_states × dim`.
    pub w_b: Vec<f64>,
    /// `n_states × dim`.
    pub w_c: Vec<f64>,
    /// Rank-one step projection, broadcast across channels.
    pub w_delta: Vec<f64>,
    pub delta_bias: Vec<f64>,
}

impl SelectiveParams {
    /// `A[d][p] = -(p + 1)`, variance-preserving projections and a step bias
    /// with `softplus(bias)` log-uniform in `[1e-3, 1e-1]`.
    pub fn init<R: Rng + ?Sized>(state_dim: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if state_dim == 0 || dim == 0 {
            return Err(Error::Config(format!(
                "selective layer needs positive sizes, got state {state_dim}, dim {dim}"
            )));
        }
        let a_log = (0..dim)
            .flat_map(|_| (0..state_dim).map(|p| ((p + 1) as f64).ln()))
            .collect();
        let proj = Normal::new(0.0, (1.0 / dim as f64).sqrt()).expect("valid std");
        let w_b = (0..state_dim * dim).map(|_| proj.sample(rng)).collect();
        let w_c = (0..state_dim * dim).map(|_| proj.sample(rng)).collect();
        let w_delta = (0..dim).map(|_| proj.sample(rng)).collect();
        let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
        let delta_bias = (0..dim)
            .map(|_| softplus_inverse(rng.random_range(lo..hi).exp()))
            .collect();
        Ok(Self {
            dim,
            n_states: state_dim,
            a_log,
            w_b,
            w_c,
            w_delta,
            delta_bias,
        })
    }

    #[inline]
    pub fn a(&self, d: usize, p: usize) -> f64 {
        -self.a_log[d * self.n_states + p].exp()
    }

    /// Runs one sequence (`x` is `len × dim`).
    pub fn forward_seq(&self, x: &[f64], mask: &[bool], scan: ScanMode) -> Result<(Vec<f64>, SelectiveCache)> {
        let (dim, np) = (self.dim, self.n_states);
        let len = mask.len();
        if x.len() != len * dim {
            return Err(Error::Shape(format!(
                "selective input: {} values for {len} steps of width {dim}",
                x.len()
            )));
        }
        let a: Vec<f64> = self.a_log.iter().map(|v| -v.exp()).collect();
        let mut u = vec![0.0; len];
        let mut delta = vec![0.0; len * dim];
        let mut bm = vec![0.0; len * np];
        let mut cm = vec![0.0; len * np];
        for l in (0..len).filter(|&l| mask[l]) {
            let xl = &x[l * dim..(l + 1) * dim];
            u[l] = dot(&self.w_delta, xl);
            for d in 0..dim {
                delta[l * dim + d] = softplus(self.delta_bias[d] + u[l]);
            }
            for p in 0..np {
                bm[l * np + p] = dot(&self.w_b[p * dim..(p + 1) * dim], xl);
                cm[l * np + p] = dot(&self.w_c[p * dim..(p + 1) * dim], xl);
            }
        }

        // states laid out [l][d][p]
        let mut states = vec![0.0; len * dim * np];
        match scan {
            ScanMode::Sequential => {
                let mut h = vec![0.0; dim * np];
                for l in 0..len {
                    if mask[l] {
                        for d in 0..dim {
                            let xd = x[l * dim + d];
                            let dl = delta[l * dim + d];
                            for p in 0..np {
                                let (ab, coef) = zoh_coeffs_real(a[d * np + p], dl);
                                let i = d * np + p;
                                h[i] = ab * h[i] + coef * bm[l * np + p] * xd;
                            }
                        }
                    }
                    states[l * dim * np..(l + 1) * dim * np].copy_from_slice(&h);
                }
            }
            ScanMode::Parallel => {
                let mut elems = Vec::with_capacity(len);
                for d in 0..dim {
                    for p in 0..np {
                        elems.clear();
                        elems.extend((0..len).map(|l| {
                            if mask[l] {
                                let (ab, coef) = zoh_coeffs_real(a[d * np + p], delta[l * dim + d]);
                                ScanElement::new(ab, coef * bm[l * np + p] * x[l * dim + d])
                            } else {
                                ScanElement::new(1.0, 0.0)
                            }
                        }));
                        for (l, v) in scan.run(&elems, 0.0).into_iter().enumerate() {
                            states[(l * dim + d) * np + p] = v;
                        }
                    }
                }
            }
        }

        let mut y = vec![0.0; len * dim];
        for l in (0..len).filter(|&l| mask[l]) {
            let c = &cm[l * np..(l + 1) * np];
            for d in 0..dim {
                y[l * dim + d] = dot(c, &states[(l * dim + d) * np..(l * dim + d + 1) * np]);
            }
        }
        Ok((
            y,
            SelectiveCache {
                mask: mask.to_vec(),
                u,
                delta,
                bm,
                cm,
                states,
            },
        ))
    }

    pub fn backward_seq(
        &self,
        x: &[f64],
        cache: &SelectiveCache,
        g_y: &[f64],
        grads: &mut SelectiveParams,
        g_x: &mut [f64],
    ) {
        let (dim, np) = (self.dim, self.n_states);
        let len = cache.mask.len();
        let a: Vec<f64> = self.a_log.iter().map(|v| -v.exp()).collect();
        let mut carry = vec![0.0; dim * np];
        let mut next_a_bar = vec![0.0; dim * np];
        let mut cur_a_bar = vec![0.0; dim * np];
        let mut g_a = vec![0.0; dim * np];
        let mut g_b = vec![0.0; np];
        let mut g_c = vec![0.0; np];
        let mut g_delta = vec![0.0; dim];

        for l in (0..len).rev() {
            let valid = cache.mask[l];
            let st = &cache.states[l * dim * np..(l + 1) * dim * np];
            let c = &cache.cm[l * np..(l + 1) * np];
            let b = &cache.bm[l * np..(l + 1) * np];
            g_b.fill(0.0);
            g_c.fill(0.0);
            g_delta.fill(0.0);
            for d in 0..dim {
                let gy = if valid { g_y[l * dim + d] } else { 0.0 };
                let xd = x[l * dim + d];
                let dl = cache.delta[l * dim + d];
                for p in 0..np {
                    let i = d * np + p;
                    // y = Σ_p C h
                    g_c[p] += gy * st[i];
                    let g = gy * c[p] + next_a_bar[i] * carry[i];
                    carry[i] = g;
                    if !valid {
                        cur_a_bar[i] = 1.0;
                        continue;
                    }
                    let (ab, coef) = zoh_coeffs_real(a[i], dl);
                    cur_a_bar[i] = ab;
                    let h_prev = if l > 0 {
                        cache.states[(l - 1) * dim * np + i]
                    } else {
                        0.0
                    };
                    let g_ab = g * h_prev;
                    let g_coef = g * b[p] * xd;
                    g_b[p] += g * coef * xd;
                    g_x[l * dim + d] += g * coef * b[p];
                    let (ga, gd) = zoh_coeffs_real_vjp(a[i], dl, ab, g_ab, g_coef);
                    g_a[i] += ga;
                    g_delta[d] += gd;
                }
            }
            std::mem::swap(&mut next_a_bar, &mut cur_a_bar);
            if !valid {
                continue;
            }
            let xl = &x[l * dim..(l + 1) * dim];
            let mut g_u = 0.0;
            for d in 0..dim {
                let gu = g_delta[d] * sigmoid(self.delta_bias[d] + cache.u[l]);
                grads.delta_bias[d] += gu;
                g_u += gu;
            }
            for d in 0..dim {
                grads.w_delta[d] += g_u * xl[d];
                g_x[l * dim + d] += g_u * self.w_delta[d];
            }
            for p in 0..np {
                let row = p * dim..(p + 1) * dim;
                for (d, j) in row.enumerate() {
                    grads.w_b[j] += g_b[p] * xl[d];
                    grads.w_c[j] += g_c[p] * xl[d];
                    g_x[l * dim + d] += g_b[p] * self.w_b[j] + g_c[p] * self.w_c[j];
                }
            }
        }
        for (i, g) in g_a.iter().enumerate() {
            grads.a_log[i] += g * a[i];
        }
    }

    /// Batched forward over `rows × len × dim` inputs.
    pub fn forward(&self, x: &[f64], mask: &[bool], rows: usize, scan: ScanMode) -> Result<Vec<f64>> {
        if rows == 0 {
            return Ok(Vec::new());
        }
        let len = mask.len() / rows;
        if mask.len() != rows * len || x.len() != rows * len * self.dim {
            return Err(Error::Shape("selective batch shapes disagree".into()));
        }
        let mut out = Vec::with_capacity(x.len());
        for b in 0..rows {
            let (y, _) = self.forward_seq(
                &x[b * len * self.dim..(b + 1) * len * self.dim],
                &mask[b * len..(b + 1) * len],
                scan,
            )?;
            out.extend(y);
        }
        Ok(out)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Intermediates kept from [`SelectiveParams::forward_seq`].
#[derive(Debug, Clone)]
pub struct SelectiveCache {
    mask: Vec<bool>,
    u: Vec<f64>,
    delta: Vec<f64>,
    bm: Vec<f64>,
    cm: Vec<f64>,
    states: Vec<f64>,
}

impl SelectiveCache {
    /// Steps `Δ`, `len × dim`.
    pub fn steps(&self) -> &[f64] {
        &self.delta
    }

    /// Hidden states, `len × dim × n_states`.
    pub fn states(&self) -> &[f64] {
        &self.states
    }
}

impl ParamSet for SelectiveParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        f(join(prefix, "a_log"), &self.a_log);
        f(join(prefix, "w_b"), &self.w_b);
        f(join(prefix, "w_c"), &self.w_c);
        f(join(prefix, "w_delta"), &self.w_delta);
        f(join(prefix, "delta_bias"), &self.delta_bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        f(join(prefix, "a_log"), &mut self.a_log);
        f(join(prefix, "w_b"), &mut self.w_b);
        f(join(prefix, "w_c"), &mut self.w_c);
        f(join(prefix, "w_delta"), &mut self.w_delta);
        f(join(prefix, "delta_bias"), &mut self.delta_bias);
    }
}

pub fn init_selective<R: Rng + ?Sized>(state_dim: usize, dim: usize, rng: &mut R) -> Result<SelectiveParams> {
    SelectiveParams::init(state_dim, dim, rng)
}

pub fn forward_selective(params: &SelectiveParams, x: &[f64], mask: &[bool], rows: usize) -> Result<Vec<f64>> {
    params.forward(x, mask, rows, ScanMode::Sequential)
}
