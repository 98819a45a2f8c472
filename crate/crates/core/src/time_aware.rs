//! Time-aware diagonal SSM layer.
//!
//! The state matrix is kept in its eigenbasis: `P/2` complex eigenvalues
//! (one representative per conjugate pair) with the input map `B̃ = V⁻¹B` and
//! output map `C̃ = CV` stored directly. Each valid position `l` is
//! discretized with the step `Δ[l][p] = ΔT[l] · s[p]`, where `ΔT[l]` is the
//! gap from interaction `l` to the next interaction or query time:
//!
//! ```text
//! h_l = exp(Δ_l Λ) h_{l-1} + Λ⁻¹(exp(Δ_l Λ) - I) B̃ x_l
//! y_l = 2 Re(C̃ h_l)
//! ```
//!
//! The factor 2 accounts for the conjugate partner of every stored state.
//! Padding positions carry the state unchanged and emit zeros.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernels::scan::{ScanElement, ScanMode};
use crate::kernels::zoh::{zoh_coeffs, zoh_coeffs_vjp};
use crate::params::{join, ParamSet};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeAwareParams {
    /// Conjugate-pair representatives, `P/2`.
    pub n_states: usize,
    pub dim: usize,
    /// `Re λ = -exp(lambda_re_log)`.
    pub lambda_re_log: Vec<f64>,
    pub lambda_im: Vec<f64>,
    /// `n_states × dim`, row-major.
    pub b_re: Vec<f64>,
    pub b_im: Vec<f64>,
    /// `dim × n_states`, row-major.
    pub c_re: Vec<f64>,
    pub c_im: Vec<f64>,
    /// Timescale `s = exp(log_s)`, shared within a conjugate pair.
    pub log_s: Vec<f64>,
}

/// Eigenvalues of the normal part of the HiPPO-LegS matrix of order `n`,
/// the representatives with positive imaginary part, ordered by it.
pub fn hippo_n_eigenvalues(n: usize) -> Vec<Complex64> {
    // S = A + p pᵀ with p_i = sqrt(i + 1/2): -1/2 on the diagonal plus a
    // skew-symmetric part.
    let s = DMatrix::from_fn(n, n, |i, j| {
        let scale = 0.5 * (((2 * i + 1) * (2 * j + 1)) as f64).sqrt();
        match i.cmp(&j) {
            std::cmp::Ordering::Greater => -scale,
            std::cmp::Ordering::Equal => -0.5,
            std::cmp::Ordering::Less => scale,
        }
    });
    let mut eig: Vec<Complex64> = s
        .complex_eigenvalues()
        .iter()
        .map(|z| Complex64::new(z.re, z.im))
        .filter(|z| z.im > 0.0)
        .collect();
    eig.sort_by(|a, b| a.im.total_cmp(&b.im));
    eig
}

impl TimeAwareParams {
    /// HiPPO-N eigenvalues, variance-preserving complex input/output maps and
    /// log-uniform timescales in `[1e-3, 1e-1]`.
    pub fn init<R: Rng + ?Sized>(state_dim: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if state_dim == 0 || state_dim % 2 != 0 {
            return Err(Error::Config(format!("time-aware state size must be even and positive, got {state_dim}")));
        }
        if dim == 0 {
            return Err(Error::Config("model dimension must be positive".into()));
        }
        let h = state_dim / 2;
        let lambda = hippo_n_eigenvalues(state_dim);
        if lambda.len() != h {
            return Err(Error::NumericDomain(format!(
                "HiPPO-N of order {state_dim} gave {} conjugate representatives",
                lambda.len()
            )));
        }
        let b_std = (1.0 / (2.0 * dim as f64)).sqrt();
        let c_std = (1.0 / (2.0 * h as f64)).sqrt();
        let nb = Normal::new(0.0, b_std).expect("valid std");
        let nc = Normal::new(0.0, c_std).expect("valid std");
        let mut sample = |d: &Normal<f64>, n: usize| -> Vec<f64> { (0..n).map(|_| d.sample(rng)).collect() };
        let b_re = sample(&nb, h * dim);
        let b_im = sample(&nb, h * dim);
        let c_re = sample(&nc, dim * h);
        let c_im = sample(&nc, dim * h);
        let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
        let log_s = (0..h).map(|_| rng.random_range(lo..hi)).collect();
        Ok(Self {
            n_states: h,
            dim,
            lambda_re_log: lambda.iter().map(|z| (-z.re).ln()).collect(),
            lambda_im: lambda.iter().map(|z| z.im).collect(),
            b_re,
            b_im,
            c_re,
            c_im,
            log_s,
        })
    }

    pub fn lambda(&self, p: usize) -> Complex64 {
        Complex64::new(-self.lambda_re_log[p].exp(), self.lambda_im[p])
    }

    pub fn timescale(&self, p: usize) -> f64 {
        self.log_s[p].exp()
    }

    /// Runs one sequence (`x` is `len × dim`, row-major).
    pub fn forward_seq(
        &self,
        x: &[f64],
        delta_t: &[f64],
        mask: &[bool],
        scan: ScanMode,
    ) -> Result<(Vec<f64>, TimeAwareCache)> {
        let (len, dim, h) = (delta_t.len(), self.dim, self.n_states);
        if x.len() != len * dim || mask.len() != len {
            return Err(Error::Shape(format!(
                "time-aware input: {} values for {len} steps of width {dim}, mask {}",
                x.len(),
                mask.len()
            )));
        }
        if let Some((l, v)) = delta_t.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InputDomain(format!("interval at position {l} is {v}")));
        }
        let lambda: Vec<Complex64> = (0..h).map(|p| self.lambda(p)).collect();
        let s: Vec<f64> = (0..h).map(|p| self.timescale(p)).collect();

        let mut a_bar = vec![Complex64::new(1.0, 0.0); len * h];
        let mut coef = vec![Complex64::new(0.0, 0.0); len * h];
        let mut bu = vec![Complex64::new(0.0, 0.0); len * h];
        for l in (0..len).filter(|&l| mask[l]) {
            let xl = &x[l * dim..(l + 1) * dim];
            for p in 0..h {
                let (a, c) = zoh_coeffs(lambda[p], delta_t[l] * s[p]);
                a_bar[l * h + p] = a;
                coef[l * h + p] = c;
                let (br, bi) = (&self.b_re[p * dim..(p + 1) * dim], &self.b_im[p * dim..(p + 1) * dim]);
                let mut re = 0.0;
                let mut im = 0.0;
                for d in 0..dim {
                    re += br[d] * xl[d];
                    im += bi[d] * xl[d];
                }
                bu[l * h + p] = Complex64::new(re, im);
            }
        }

        let mut states = vec![Complex64::new(0.0, 0.0); len * h];
        let mut elems = Vec::with_capacity(len);
        for p in 0..h {
            elems.clear();
            elems.extend((0..len).map(|l| {
                let i = l * h + p;
                ScanElement::new(a_bar[i], coef[i] * bu[i])
            }));
            for (l, v) in scan.run(&elems, Complex64::new(0.0, 0.0)).into_iter().enumerate() {
                states[l * h + p] = v;
            }
        }

        let mut y = vec![0.0; len * dim];
        for l in (0..len).filter(|&l| mask[l]) {
            let hl = &states[l * h..(l + 1) * h];
            for d in 0..dim {
                let cr = &self.c_re[d * h..(d + 1) * h];
                let ci = &self.c_im[d * h..(d + 1) * h];
                let mut acc = 0.0;
                for p in 0..h {
                    acc += cr[p] * hl[p].re - ci[p] * hl[p].im;
                }
                y[l * dim + d] = 2.0 * acc;
            }
        }

        Ok((
            y,
            TimeAwareCache {
                delta_t: delta_t.to_vec(),
                mask: mask.to_vec(),
                a_bar,
                coef,
                bu,
                states,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` and input gradients into
    /// `g_x`.
    pub fn backward_seq(
        &self,
        x: &[f64],
        cache: &TimeAwareCache,
        g_y: &[f64],
        grads: &mut TimeAwareParams,
        g_x: &mut [f64],
    ) {
        let (len, dim, h) = (cache.delta_t.len(), self.dim, self.n_states);
        let lambda: Vec<Complex64> = (0..h).map(|p| self.lambda(p)).collect();
        let s: Vec<f64> = (0..h).map(|p| self.timescale(p)).collect();
        let zero = Complex64::new(0.0, 0.0);

        let mut g_lambda = vec![zero; h];
        let mut g_s = vec![0.0; h];
        let mut carry = vec![zero; h];
        let mut g_h = vec![zero; h];
        for l in (0..len).rev() {
            // y_l = 2 Re(C̃ h_l)  =>  g_h = 2 Σ_d g_y conj(c), g_c = 2 g_y conj(h)
            g_h.fill(zero);
            if cache.mask[l] {
                let hl = &cache.states[l * h..(l + 1) * h];
                for d in 0..dim {
                    let gy = 2.0 * g_y[l * dim + d];
                    if gy == 0.0 {
                        continue;
                    }
                    for p in 0..h {
                        let i = d * h + p;
                        g_h[p] += Complex64::new(self.c_re[i], -self.c_im[i]) * gy;
                        grads.c_re[i] += gy * hl[p].re;
                        grads.c_im[i] -= gy * hl[p].im;
                    }
                }
            }
            for p in 0..h {
                let next_a = if l + 1 < len {
                    cache.a_bar[(l + 1) * h + p].conj()
                } else {
                    zero
                };
                carry[p] = g_h[p] + next_a * carry[p];
            }
            if !cache.mask[l] {
                continue;
            }
            let xl = &x[l * dim..(l + 1) * dim];
            for p in 0..h {
                let i = l * h + p;
                let g = carry[p];
                let h_prev = if l > 0 { cache.states[i - h] } else { zero };
                let g_a_bar = g * h_prev.conj();
                let g_coef = g * cache.bu[i].conj();
                let g_bu = g * cache.coef[i].conj();
                let delta = cache.delta_t[l] * s[p];
                let (gl, gd) = zoh_coeffs_vjp(lambda[p], delta, cache.a_bar[i], g_a_bar, g_coef);
                g_lambda[p] += gl;
                g_s[p] += gd * cache.delta_t[l];
                for d in 0..dim {
                    let j = p * dim + d;
                    grads.b_re[j] += g_bu.re * xl[d];
                    grads.b_im[j] += g_bu.im * xl[d];
                    g_x[l * dim + d] += g_bu.re * self.b_re[j] + g_bu.im * self.b_im[j];
                }
            }
        }
        for p in 0..h {
            grads.lambda_re_log[p] += g_lambda[p].re * lambda[p].re;
            grads.lambda_im[p] += g_lambda[p].im;
            grads.log_s[p] += g_s[p] * s[p];
        }
    }

    /// Batched forward over `rows × len × dim` inputs.
    pub fn forward(
        &self,
        x: &[f64],
        delta_t: &[f64],
        mask: &[bool],
        rows: usize,
        scan: ScanMode,
    ) -> Result<Vec<f64>> {
        if rows == 0 {
            return Ok(Vec::new());
        }
        let len = delta_t.len() / rows;
        if delta_t.len() != rows * len || mask.len() != rows * len || x.len() != rows * len * self.dim {
            return Err(Error::Shape("time-aware batch shapes disagree".into()));
        }
        let mut out = Vec::with_capacity(x.len());
        for b in 0..rows {
            let r = b * len..(b + 1) * len;
            let (y, _) = self.forward_seq(
                &x[b * len * self.dim..(b + 1) * len * self.dim],
                &delta_t[r.clone()],
                &mask[r],
                scan,
            )?;
            out.extend(y);
        }
        Ok(out)
    }
}

/// Intermediates kept from [`TimeAwareParams::forward_seq`].
#[derive(Debug, Clone)]
pub struct TimeAwareCache {
    delta_t: Vec<f64>,
    mask: Vec<bool>,
    a_bar: Vec<Complex64>,
    coef: Vec<Complex64>,
    bu: Vec<Complex64>,
    states: Vec<Complex64>,
}

impl TimeAwareCache {
    /// Hidden states, `len × n_states`.
    pub fn states(&self) -> &[Complex64] {
        &self.states
    }
}

impl ParamSet for TimeAwareParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        f(join(prefix, "lambda_re_log"), &self.lambda_re_log);
        f(join(prefix, "lambda_im"), &self.lambda_im);
        f(join(prefix, "b_re"), &self.b_re);
        f(join(prefix, "b_im"), &self.b_im);
        f(join(prefix, "c_re"), &self.c_re);
        f(join(prefix, "c_im"), &self.c_im);
        f(join(prefix, "log_s"), &self.log_s);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        f(join(prefix, "lambda_re_log"), &mut self.lambda_re_log);
        f(join(prefix, "lambda_im"), &mut self.lambda_im);
        f(join(prefix, "b_re"), &mut self.b_re);
        f(join(prefix, "b_im"), &mut self.b_im);
        f(join(prefix, "c_re"), &mut self.c_re);
        f(join(prefix, "c_im"), &mut self.c_im);
        f(join(prefix, "log_s"), &mut self.log_s);
    }
}

/// Batched convenience entry point.
pub fn forward_time_aware(
    params: &TimeAwareParams,
    x: &[f64],
    delta_t: &[f64],
    mask: &[bool],
    rows: usize,
) -> Result<Vec<f64>> {
    params.forward(x, delta_t, mask, rows, ScanMode::Sequential)
}

pub fn init_time_aware<R: Rng + ?Sized>(state_dim: usize, dim: usize, rng: &mut R) -> Result<TimeAwareParams> {
    TimeAwareParams::init(state_dim, dim, rng)
}
