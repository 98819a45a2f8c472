//! Training loop, Adam, early stopping and the finite-difference audit.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{make_batches, Batch, Dataset, Split};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate_examples, EvalOptions, Metrics};
use crate::model::{Mode, Model, ModelParams};
use crate::params::ParamSet;

/// Parameter storage precision. Arithmetic is always `f64`; narrow mode
/// rounds parameters through `f32` after every update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    Wide,
    Narrow,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::Wide => "wide",
            Precision::Narrow => "narrow",
        }
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wide" | "f64" => Ok(Precision::Wide),
            "narrow" | "f32" => Ok(Precision::Narrow),
            other => Err(Error::Config(format!("unknown precision `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub drop_probability: f64,
    pub precision: Precision,
    /// Global gradient-norm cap; `0` disables clipping.
    pub grad_clip: f64,
    /// Cutoff of the validation metric used for early stopping.
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            drop_probability: 0.0,
            precision: Precision::Wide,
            grad_clip: 5.0,
            eval_k: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.patience == 0 || self.eval_k == 0 {
            return Err(Error::Config("batch_size, patience and eval_k must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.drop_probability) {
            return Err(Error::Config(format!(
                "drop_probability must be in [0, 1), got {}",
                self.drop_probability
            )));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be non-negative".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "learning_rate={:?}\nbatch_size={}\nmax_epochs={}\npatience={}\nseed={}\ndrop_probability={:?}\nprecision={}\ngrad_clip={:?}\neval_k={}\n",
            self.learning_rate,
            self.batch_size,
            self.max_epochs,
            self.patience,
            self.seed,
            self.drop_probability,
            self.precision.name(),
            self.grad_clip,
            self.eval_k,
        )
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value `{v}` for `{k}`")))
        }
        match key {
            "learning_rate" | "lr" => self.learning_rate = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "max_epochs" | "epochs" => self.max_epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "drop_probability" => self.drop_probability = num(key, value)?,
            "precision" => self.precision = value.parse()?,
            "grad_clip" => self.grad_clip = num(key, value)?,
            "eval_k" => self.eval_k = num(key, value)?,
            other => return Err(Error::UnknownKey(other.to_owned())),
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let g = grads.to_flat();
        let mut off = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        params.visit_mut("", &mut |_, t| {
            for (j, p) in t.iter_mut().enumerate() {
                let i = off + j;
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                *p -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
            off += t.len();
        });
    }
}

/// Scales `grads` so that its global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    grads.visit("", &mut |_, t| sq += t.iter().map(|v| v * v).sum::<f64>());
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.visit_mut("", &mut |_, t| t.iter_mut().for_each(|v| *v *= s));
    }
    norm
}

fn round_to_f32(params: &mut ModelParams) {
    params.visit_mut("", &mut |_, t| t.iter_mut().for_each(|v| *v = *v as f32 as f64));
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid: Metrics,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation NDCG.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch - 1]
    }
}

/// One line per epoch: epoch, train loss, validation HR, NDCG, MRR.
pub fn history_tsv(history: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in history {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.epoch, r.train_loss, r.valid.hr, r.valid.ndcg, r.valid.mrr
        );
    }
    out
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    std::fs::write(path, history_tsv(history)).map_err(|e| Error::io(path, e))
}

/// Trains `model` in place on the dataset's training prefixes and returns
/// the best-validation snapshot. `on_epoch` sees each record as it lands.
pub fn train(
    mut model: Model,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.n_items() != dataset.n_items {
        return Err(Error::VocabularyMismatch(format!(
            "model has {} items, dataset has {}",
            model.n_items(),
            dataset.n_items
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let valid = dataset.eval_examples(Split::Valid);
    let opts = EvalOptions {
        k: cfg.eval_k,
        filter_history: false,
    };
    let mut adam = Adam::new(cfg.learning_rate, model.params.n_scalars());
    let base = dataset.training_sequences();
    if base.is_empty() {
        return Err(Error::NoTargets);
    }
    let d = model.dim();

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut seqs = if cfg.drop_probability > 0.0 {
            dataset.dropped_training_sequences(cfg.drop_probability, &mut rng)?
        } else {
            base.clone()
        };
        seqs.shuffle(&mut rng);
        let batches = make_batches(&seqs, model.config.max_len, cfg.batch_size)?;
        let mut loss_sum = 0.0;
        let mut n_targets = 0usize;
        for (step, batch) in batches.iter().enumerate() {
            let n = batch.n_targets();
            if n == 0 {
                continue;
            }
            let (loss, mut grads) = model.loss_and_grad(batch, Mode::Train { seed: rng.random() })?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            clip_global_norm(&mut grads, cfg.grad_clip);
            adam.step(&mut model.params, &grads);
            model.params.embedding[..d].fill(0.0);
            if cfg.precision == Precision::Narrow {
                round_to_f32(&mut model.params);
            }
            loss_sum += loss * n as f64;
            n_targets += n;
        }
        let report = evaluate_examples(&model, &valid, Split::Valid, opts)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n_targets.max(1) as f64,
            valid: report.metrics.unwrap_or_default(),
        };
        on_epoch(&record);
        let score = record.valid.ndcg;
        history.push(record);
        match &best {
            Some((b, _, _)) if score <= *b => since_best += 1,
            _ => {
                best = Some((score, epoch, model.params.clone()));
                since_best = 0;
            }
        }
        if since_best >= cfg.patience {
            break;
        }
    }
    let (_, best_epoch, params) = best.ok_or_else(|| Error::Config("max_epochs must be at least 1".into()))?;
    model.params = params;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorAudit {
    pub name: String,
    pub coords_checked: usize,
    /// `max |analytic − numeric| / max(max |analytic|, max |numeric|)` over
    /// the checked coordinates.
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorAudit>,
}

impl AuditReport {
    pub fn failures(&self) -> Vec<String> {
        self.tensors
            .iter()
            .filter(|t| !(t.max_rel_error <= self.tolerance))
            .map(|t| t.name.clone())
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    /// `Err(AuditFailure)` naming every tensor over tolerance.
    pub fn into_result(self) -> Result<Self> {
        let f = self.failures();
        if f.is_empty() {
            Ok(self)
        } else {
            Err(Error::AuditFailure(f))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditConfig {
    pub h: f64,
    pub tolerance: f64,
    /// Coordinates sampled per tensor; `None` checks all of them.
    pub coords_per_tensor: Option<usize>,
    pub seed: u64,
    /// Negates the analytic gradient of the named tensor, to prove the audit
    /// can fail.
    pub corrupt_tensor: Option<String>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tolerance: 1e-4,
            coords_per_tensor: None,
            seed: 0,
            corrupt_tensor: None,
        }
    }
}

/// Compares the analytic gradient of the batch loss (dropout off, no
/// clipping) with central differences, tensor by tensor.
pub fn grad_audit(model: &Model, batch: &Batch, cfg: &AuditConfig) -> Result<AuditReport> {
    let (_, grads) = model.loss_and_grad(batch, Mode::Eval)?;
    let analytic = grads.to_flat();
    let base = model.params.to_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = model.clone();
    let mut tensors = Vec::new();
    let mut off = 0;
    for (name, t) in model.params.named_tensors() {
        let n = t.len();
        let mut coords: Vec<usize> = (0..n).collect();
        if let Some(k) = cfg.coords_per_tensor.filter(|&k| k < n) {
            coords.shuffle(&mut rng);
            coords.truncate(k);
            coords.sort_unstable();
        }
        let sign = if cfg.corrupt_tensor.as_deref() == Some(name.as_str()) {
            -1.0
        } else {
            1.0
        };
        let mut max_diff: f64 = 0.0;
        let mut max_mag: f64 = 0.0;
        for &c in &coords {
            let i = off + c;
            let mut flat = base.clone();
            flat[i] = base[i] + cfg.h;
            probe.params.load_flat(&flat);
            let up = probe.loss(batch)?;
            flat[i] = base[i] - cfg.h;
            probe.params.load_flat(&flat);
            let down = probe.loss(batch)?;
            let numeric = (up - down) / (2.0 * cfg.h);
            let a = sign * analytic[i];
            max_diff = max_diff.max((a - numeric).abs());
            max_mag = max_mag.max(a.abs()).max(numeric.abs());
        }
        let max_rel_error = if max_mag > 0.0 { max_diff / max_mag } else { 0.0 };
        tensors.push(TensorAudit {
            name,
            coords_checked: coords.len(),
            max_rel_error,
        });
        off += n;
    }
    Ok(AuditReport {
        tolerance: cfg.tolerance,
        tensors,
    })
}
