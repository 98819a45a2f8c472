//! Linear recurrences `h_t = A_t h_{t-1} + b_t` over diagonal states.
//!
//! [`sequential_recurrence`] is the reference left-to-right loop.
//! [`parallel_scan`] evaluates the same recurrence with a work-efficient
//! up-sweep/down-sweep over the associative operator
//! `(A1, b1) ∘ (A2, b2) = (A2·A1, A2·b1 + b2)`. Lengths that are not a power
//! of two are split into power-of-two chunks (largest first) and the carry
//! is threaded through them, so the reduction tree depends only on `L`.

use std::ops::{Add, Mul};

use num_complex::Complex;
use rayon::prelude::*;

/// Values the recurrence can run over.
pub trait ScanValue: Copy + Send + Sync + Add<Output = Self> + Mul<Output = Self> {
    fn zero() -> Self;
    fn one() -> Self;
}

impl ScanValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
}

impl ScanValue for f32 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
}

macro_rules! complex_scan_value {
    ($t:ty) => {
        impl ScanValue for Complex<$t> {
            fn zero() -> Self {
                Complex::new(0.0, 0.0)
            }
            fn one() -> Self {
                Complex::new(1.0, 0.0)
            }
        }
    };
}

complex_scan_value!(f64);
complex_scan_value!(f32);

/// One step of the recurrence: multiplier `a` and additive term `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanElement<T> {
    pub a: T,
    pub b: T,
}

impl<T: ScanValue> ScanElement<T> {
    pub fn new(a: T, b: T) -> Self {
        Self { a, b }
    }

    pub fn identity() -> Self {
        Self {
            a: T::one(),
            b: T::zero(),
        }
    }

    /// `self` first, then `later`.
    #[inline]
    pub fn then(self, later: Self) -> Self {
        Self {
            a: later.a * self.a,
            b: later.a * self.b + later.b,
        }
    }

    #[inline]
    pub fn apply(self, h: T) -> T {
        self.a * h + self.b
    }
}

/// Reference left-to-right evaluation; returns `h_1..h_L`.
pub fn sequential_recurrence<T: ScanValue>(elements: &[ScanElement<T>], h0: T) -> Vec<T> {
    let mut h = h0;
    elements
        .iter()
        .map(|e| {
            h = e.apply(h);
            h
        })
        .collect()
}

/// Execution knobs for [`parallel_scan_with`]. The tree shape never depends
/// on these, only on the input length, so results are reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanConfig {
    /// Minimum number of independent nodes in a tree level before that level
    /// is dispatched to the thread pool.
    pub parallel_grain: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            parallel_grain: 4096,
        }
    }
}

/// Work-efficient scan; same results as [`sequential_recurrence`] up to
/// floating-point reassociation.
pub fn parallel_scan<T: ScanValue>(elements: &[ScanElement<T>], h0: T) -> Vec<T> {
    parallel_scan_with(elements, h0, ScanConfig::default())
}

pub fn parallel_scan_with<T: ScanValue>(
    elements: &[ScanElement<T>],
    h0: T,
    config: ScanConfig,
) -> Vec<T> {
    let mut out = Vec::with_capacity(elements.len());
    let mut tree = Vec::new();
    let mut carry = h0;
    let mut start = 0;
    while start < elements.len() {
        let remaining = elements.len() - start;
        let chunk = 1usize << (usize::BITS - 1 - remaining.leading_zeros());
        let block = &elements[start..start + chunk];
        tree.clear();
        tree.extend_from_slice(block);
        exclusive_blelloch(&mut tree, config);
        for (prefix, e) in tree.iter().zip(block) {
            out.push(prefix.then(*e).apply(carry));
        }
        carry = *out.last().expect("chunk is non-empty");
        start += chunk;
    }
    out
}

/// In-place exclusive scan of a power-of-two slice.
fn exclusive_blelloch<T: ScanValue>(tree: &mut [ScanElement<T>], config: ScanConfig) {
    let n = tree.len();
    debug_assert!(n.is_power_of_two());
    let up = |c: &mut [ScanElement<T>]| {
        let half = c.len() / 2;
        c[c.len() - 1] = c[half - 1].then(c[c.len() - 1]);
    };
    let down = |c: &mut [ScanElement<T>]| {
        let half = c.len() / 2;
        let last = c.len() - 1;
        let left = c[half - 1];
        c[half - 1] = c[last];
        c[last] = c[last].then(left);
    };

    let mut stride = 2;
    while stride <= n {
        if n / stride >= config.parallel_grain {
            tree.par_chunks_mut(stride).for_each(up);
        } else {
            tree.chunks_mut(stride).for_each(up);
        }
        stride *= 2;
    }
    tree[n - 1] = ScanElement::identity();
    let mut stride = n;
    while stride >= 2 {
        if n / stride >= config.parallel_grain {
            tree.par_chunks_mut(stride).for_each(down);
        } else {
            tree.chunks_mut(stride).for_each(down);
        }
        stride /= 2;
    }
}

/// Which evaluator the layers use for their recurrences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanMode {
    #[default]
    Sequential,
    Parallel,
}

impl ScanMode {
    pub fn run<T: ScanValue>(self, elements: &[ScanElement<T>], h0: T) -> Vec<T> {
        match self {
            ScanMode::Sequential => sequential_recurrence(elements, h0),
            ScanMode::Parallel => parallel_scan(elements, h0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScanMode::Sequential => "sequential",
            ScanMode::Parallel => "parallel",
        }
    }
}

impl std::str::FromStr for ScanMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(ScanMode::Sequential),
            "parallel" => Ok(ScanMode::Parallel),
            other => Err(format!("unknown scan mode `{other}`")),
        }
    }
}
