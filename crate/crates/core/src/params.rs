//! Named flat views over parameter structs.
//!
//! Every trainable struct exposes its tensors in a fixed declared order.
//! Gradients reuse the parameter types, so the same visitor drives the
//! optimizer, checkpoints and the gradient audit.

pub trait ParamSet {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64]));

    fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        self.visit("", &mut |n, t| out.push((n, t)));
        out
    }

    fn n_scalars(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut("", &mut |_, t| t.fill(value));
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    /// Flattens all tensors in declared order.
    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_scalars());
        self.visit("", &mut |_, t| out.extend_from_slice(t));
        out
    }

    fn load_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        self.visit_mut("", &mut |_, t| {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        });
        assert_eq!(off, flat.len(), "flat length mismatch");
    }

    /// `self += scale * other`, tensor by tensor.
    fn axpy(&mut self, scale: f64, other: &Self)
    where
        Self: Sized,
    {
        let flat = other.to_flat();
        let mut off = 0;
        self.visit_mut("", &mut |_, t| {
            let n = t.len();
            for (a, b) in t.iter_mut().zip(&flat[off..off + n]) {
                *a += scale * b;
            }
            off += n;
        });
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_owned()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine parameters of a layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNormParams {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
        }
    }
}

impl ParamSet for LayerNormParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }
}
