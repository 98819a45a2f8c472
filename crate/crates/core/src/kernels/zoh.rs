//! Zero-order-hold discretization of diagonal linear systems.
//!
//! For a diagonal entry `λ` and step `Δ`, the exact discretization of
//! `h' = λh + b̃x` with `x` held constant over the step is
//!
//! ```text
//! ā = exp(Δλ)
//! b̄ = (ā - 1) / λ · b̃ = Δ · φ(Δλ) · b̃,   φ(z) = (e^z - 1) / z
//! ```
//!
//! `φ` is evaluated through `expm1`, and below [`EPS_SWITCH`] the analytic
//! limit `b̄ = Δ b̃` is used. Real entries (the selective layer, or complex
//! entries with zero imaginary part) go through the same real primitive, so
//! both kernels agree bit-for-bit on the real axis.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Below this `|Δλ|` the input coefficient collapses to `Δ`.
pub const EPS_SWITCH: f64 = 1e-8;

/// Below this `|z|` `φ'(z)` is evaluated by its Taylor series.
const PHI_PRIME_SERIES: f64 = 1e-2;

/// `exp(z) - 1` without cancellation near zero.
pub fn complex_expm1(z: Complex64) -> Complex64 {
    let (s, c) = z.im.sin_cos();
    let half = (0.5 * z.im).sin();
    Complex64::new(
        z.re.exp_m1() * c - 2.0 * half * half,
        z.re.exp() * s,
    )
}

/// `φ'(z) = (z e^z - e^z + 1) / z²` for the real axis.
fn phi_prime_real(z: f64) -> f64 {
    if z.abs() < PHI_PRIME_SERIES {
        // sum_{k>=1} k z^{k-1} / (k+1)!
        1.0 / 2.0
            + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z * (1.0 / 30.0 + z * (1.0 / 144.0))))
    } else {
        (z * z.exp() - z.exp_m1()) / (z * z)
    }
}

fn phi_prime_complex(z: Complex64) -> Complex64 {
    if z.norm() < PHI_PRIME_SERIES {
        let c = |v: f64| Complex64::new(v, 0.0);
        c(0.5) + z * (c(1.0 / 3.0) + z * (c(1.0 / 8.0) + z * (c(1.0 / 30.0) + z * c(1.0 / 144.0))))
    } else {
        (z * z.exp() - complex_expm1(z)) / (z * z)
    }
}

/// `(ā, (ā - 1)/a)` for a real diagonal entry.
#[inline]
pub fn zoh_coeffs_real(a: f64, delta: f64) -> (f64, f64) {
    let z = delta * a;
    let a_bar = z.exp();
    let coef = if z.abs() < EPS_SWITCH {
        delta
    } else {
        z.exp_m1() / a
    };
    (a_bar, coef)
}

/// `(ā, (ā - 1)/λ)` for a complex diagonal entry.
#[inline]
pub fn zoh_coeffs(lambda: Complex64, delta: f64) -> (Complex64, Complex64) {
    if lambda.im == 0.0 {
        let (a_bar, coef) = zoh_coeffs_real(lambda.re, delta);
        return (Complex64::new(a_bar, 0.0), Complex64::new(coef, 0.0));
    }
    let z = lambda * delta;
    let a_bar = z.exp();
    let coef = if z.norm() < EPS_SWITCH {
        Complex64::new(delta, 0.0)
    } else {
        complex_expm1(z) / lambda
    };
    (a_bar, coef)
}

/// Pulls cotangents of `(ā, coef)` back to `(a, Δ)` on the real axis.
#[inline]
pub fn zoh_coeffs_real_vjp(a: f64, delta: f64, a_bar: f64, g_a_bar: f64, g_coef: f64) -> (f64, f64) {
    let z = delta * a;
    let g_a = g_a_bar * delta * a_bar + g_coef * delta * delta * phi_prime_real(z);
    let g_delta = g_a_bar * a * a_bar + g_coef * a_bar;
    (g_a, g_delta)
}

/// Pulls cotangents of `(ā, coef)` back to `(λ, Δ)`.
///
/// Cotangents of complex quantities use the `∂f/∂re + i ∂f/∂im` convention,
/// so for a holomorphic map `w = f(λ)` the pullback is `g_w · conj(f'(λ))`.
#[inline]
pub fn zoh_coeffs_vjp(
    lambda: Complex64,
    delta: f64,
    a_bar: Complex64,
    g_a_bar: Complex64,
    g_coef: Complex64,
) -> (Complex64, f64) {
    let z = lambda * delta;
    let d_abar_d_lambda = a_bar * delta;
    let d_coef_d_lambda = phi_prime_complex(z) * (delta * delta);
    let g_lambda = g_a_bar * d_abar_d_lambda.conj() + g_coef * d_coef_d_lambda.conj();
    // dā/dΔ = λā, dcoef/dΔ = ā
    let g_delta = (g_a_bar * (lambda * a_bar).conj() + g_coef * a_bar.conj()).re;
    (g_lambda, g_delta)
}

fn check_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericDomain(format!("{what} is not finite ({v})")))
    }
}

/// Discretizes one diagonal entry of the time-aware system.
///
/// Returns `(ā, b̄)` with `b̄ = (ā - 1)/λ · b̃`.
pub fn zoh_discretize_diagonal(
    lambda: Complex64,
    b_tilde: Complex64,
    delta: f64,
) -> Result<(Complex64, Complex64)> {
    check_finite("lambda.re", lambda.re)?;
    check_finite("lambda.im", lambda.im)?;
    check_finite("b_tilde.re", b_tilde.re)?;
    check_finite("b_tilde.im", b_tilde.im)?;
    check_finite("delta", delta)?;
    if delta < 0.0 {
        return Err(Error::NumericDomain(format!("negative step {delta}")));
    }
    let (a_bar, coef) = zoh_coeffs(lambda, delta);
    Ok((a_bar, coef * b_tilde))
}

/// Discretizes one (channel, state) entry of the selective system.
///
/// `a` is the real diagonal entry, `b_t` the input-dependent input-map entry
/// and `delta_t` the softplus step.
pub fn selective_discretize(a: f64, b_t: f64, delta_t: f64) -> Result<(f64, f64)> {
    check_finite("a", a)?;
    check_finite("b_t", b_t)?;
    check_finite("delta_t", delta_t)?;
    if delta_t < 0.0 {
        return Err(Error::NumericDomain(format!("negative step {delta_t}")));
    }
    let (a_bar, coef) = zoh_coeffs_real(a, delta_t);
    Ok((a_bar, coef * b_t))
}
