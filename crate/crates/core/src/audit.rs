//! Self-checks runnable from the command line: scan equivalence, ZOH
//! against quadrature, and the gradient audit on a tiny model.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Batch, SequenceRow};
use crate::error::Result;
use crate::kernels::scan::{parallel_scan_with, sequential_recurrence, ScanConfig, ScanElement};
use crate::kernels::zoh::{selective_discretize, zoh_discretize_diagonal};
use crate::model::{Model, ModelConfig};
use crate::trainer::{grad_audit, AuditConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Scan,
    Zoh,
    Grad,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Scan, Suite::Zoh, Suite::Grad];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Scan => "scan",
            Suite::Zoh => "zoh",
            Suite::Grad => "grad",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Suite::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown suite `{s}` (expected scan, zoh or grad)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    /// Names of failing sub-checks, if any.
    pub failures: Vec<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.max_error <= self.tolerance
    }

    pub fn summary(&self) -> String {
        format!(
            "{}\t{}\tcases={}\tmax_error={:e}\ttolerance={:e}{}",
            self.suite.name(),
            if self.passed() { "PASS" } else { "FAIL" },
            self.cases,
            self.max_error,
            self.tolerance,
            if self.failures.is_empty() {
                String::new()
            } else {
                format!("\tfailing={}", self.failures.join(","))
            }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditOptions {
    pub seed: u64,
    pub scan_cases: usize,
    pub zoh_cases: usize,
    /// Deliberately breaks the implementation side of the selected suite.
    pub inject_fault: Option<Suite>,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            scan_cases: 1000,
            zoh_cases: 1000,
            inject_fault: None,
        }
    }
}

pub fn run_suite(suite: Suite, opts: &AuditOptions) -> Result<SuiteReport> {
    let fault = opts.inject_fault == Some(suite);
    match suite {
        Suite::Scan => Ok(scan_suite(opts.scan_cases, opts.seed, fault)),
        Suite::Zoh => zoh_suite(opts.zoh_cases, opts.seed, fault),
        Suite::Grad => grad_suite(opts.seed, fault),
    }
}

fn random_stable(rng: &mut ChaCha8Rng, len: usize) -> Vec<ScanElement<Complex64>> {
    (0..len)
        .map(|_| {
            let a = Complex64::from_polar(rng.random_range(0.0..1.0), rng.random_range(-3.2..3.2));
            let b = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            ScanElement::new(a, b)
        })
        .collect()
}

/// Parallel vs sequential scan on random stable sequences of length
/// `1..=1024`; error is `max |Δ| / max |reference|` per sequence.
fn scan_suite(cases: usize, seed: u64, fault: bool) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_error: f64 = 0.0;
    let config = ScanConfig { parallel_grain: 64 };
    for _ in 0..cases {
        let len = rng.random_range(1..=1024);
        let elems = random_stable(&mut rng, len);
        let h0 = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let reference = sequential_recurrence(&elems, h0);
        let mut got = parallel_scan_with(&elems, h0, config);
        if fault {
            got[len / 2] += Complex64::new(1e-3, 0.0);
        }
        let scale = reference.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let diff = reference
            .iter()
            .zip(&got)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        max_error = max_error.max(diff / scale);
    }
    SuiteReport {
        suite: Suite::Scan,
        cases,
        max_error,
        tolerance: 1e-10,
        failures: Vec::new(),
    }
}

/// `∫₀^Δ e^{λτ} dτ` by composite 16-point Gauss–Legendre, with panels fine
/// enough that each spans under a radian of `|λ|τ`.
pub fn zoh_quadrature(lambda: Complex64, delta: f64) -> Complex64 {
    if delta == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let (nodes, weights) = gauss_legendre_16();
    let panels = ((lambda.norm() * delta).ceil() as usize).max(1) * 2;
    let width = delta / panels as f64;
    let mut total = Complex64::new(0.0, 0.0);
    for k in 0..panels {
        let mid = (k as f64 + 0.5) * width;
        let mut part = Complex64::new(0.0, 0.0);
        for (x, w) in nodes.iter().zip(&weights) {
            part += (lambda * (mid + 0.5 * width * x)).exp() * *w;
        }
        total += part * (0.5 * width);
    }
    total
}

fn gauss_legendre_16() -> ([f64; 16], [f64; 16]) {
    let half = [
        (0.095_012_509_837_637_44, 0.189_450_610_455_068_5),
        (0.281_603_550_779_258_9, 0.182_603_415_044_923_6),
        (0.458_016_777_657_227_4, 0.169_156_519_395_002_5),
        (0.617_876_244_402_643_7, 0.149_595_988_816_576_7),
        (0.755_404_408_355_003, 0.124_628_971_255_533_9),
        (0.865_631_202_387_831_7, 0.095_158_511_682_492_78),
        (0.944_575_023_073_232_6, 0.062_253_523_938_647_89),
        (0.989_400_934_991_649_9, 0.027_152_459_411_754_09),
    ];
    let mut x = [0.0; 16];
    let mut w = [0.0; 16];
    for (i, (xi, wi)) in half.iter().enumerate() {
        x[2 * i] = *xi;
        x[2 * i + 1] = -xi;
        w[2 * i] = *wi;
        w[2 * i + 1] = *wi;
    }
    (x, w)
}

fn zoh_suite(cases: usize, seed: u64, fault: bool) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_error: f64 = 0.0;
    let mut failures = Vec::new();
    for _ in 0..cases {
        let lambda = Complex64::new(-rng.random_range(1e-3..5.0), rng.random_range(-20.0..20.0));
        let delta = rng.random_range(0.0..5.0);
        let b = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let (_, mut b_bar) = zoh_discretize_diagonal(lambda, b, delta)?;
        if fault {
            b_bar *= 1.0 + 1e-6;
        }
        let reference = zoh_quadrature(lambda, delta) * b;
        let err = (b_bar - reference).norm() / reference.norm().max(f64::MIN_POSITIVE);
        max_error = max_error.max(err);

        // the selective kernel is the real-axis special case
        let a = lambda.re;
        let bt = b.re;
        let (sa, sb) = selective_discretize(a, bt, delta)?;
        let (da, db) = zoh_discretize_diagonal(Complex64::new(a, 0.0), Complex64::new(bt, 0.0), delta)?;
        if sa != da.re || sb != db.re || da.im != 0.0 || db.im != 0.0 {
            if !failures.contains(&"selective-vs-diagonal".to_owned()) {
                failures.push("selective-vs-diagonal".to_owned());
            }
        }
    }
    Ok(SuiteReport {
        suite: Suite::Zoh,
        cases,
        max_error,
        tolerance: 1e-8,
        failures,
    })
}

/// The fixed tiny configuration of the gradient audit.
pub fn tiny_audit_model(seed: u64) -> Result<Model> {
    Model::new(
        ModelConfig {
            n_items: 12,
            embed_dim: 8,
            state_dim: 4,
            n_blocks: 1,
            max_len: 4,
            dropout: 0.0,
            ..ModelConfig::default()
        },
        seed,
    )
}

/// Two rows of length 4 (the second left-padded) over the tiny vocabulary.
pub fn tiny_audit_batch(seed: u64) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut row = |len: usize| {
        let items: Vec<u32> = (0..len).map(|_| rng.random_range(1..=12)).collect();
        let intervals = (0..len).map(|_| rng.random_range(0.0..3.0)).collect();
        let targets = (0..len).map(|_| rng.random_range(1..=12)).collect();
        SequenceRow {
            items,
            intervals,
            targets,
        }
    };
    let rows = vec![row(4), row(3)];
    Batch::from_rows(&rows, 4)
}

fn grad_suite(seed: u64, fault: bool) -> Result<SuiteReport> {
    let mut model = tiny_audit_model(seed)?;
    // lift the embeddings off their near-zero init so every path carries signal
    model.params.embedding.iter_mut().for_each(|v| *v *= 25.0);
    let batch = tiny_audit_batch(seed)?;
    let cfg = AuditConfig {
        seed,
        corrupt_tensor: fault.then(|| "blocks.0.time.b_re".to_owned()),
        ..AuditConfig::default()
    };
    let report = grad_audit(&model, &batch, &cfg)?;
    let max_error = report.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(SuiteReport {
        suite: Suite::Grad,
        cases: report.tensors.len(),
        max_error,
        tolerance: report.tolerance,
        failures: report.failures(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_matches_closed_form_for_real_lambda() {
        let q = zoh_quadrature(Complex64::new(-1.0, 0.0), 2.0_f64.ln());
        assert!((q.re - 0.5).abs() < 1e-14 && q.im.abs() < 1e-15);
    }

    #[test]
    fn clean_suites_pass_and_faults_fail() {
        let opts = AuditOptions {
            scan_cases: 20,
            zoh_cases: 200,
            ..AuditOptions::default()
        };
        for suite in Suite::ALL {
            let r = run_suite(suite, &opts).unwrap();
            assert!(r.passed(), "{}", r.summary());
            let broken = run_suite(
                suite,
                &AuditOptions {
                    inject_fault: Some(suite),
                    ..opts.clone()
                },
            )
            .unwrap();
            assert!(!broken.passed(), "{}", broken.summary());
        }
    }
}
