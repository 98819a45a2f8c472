//! Leave-one-out ranking over the full catalog.

use std::fmt::{self, Write as _};

use rayon::prelude::*;

use crate::data::{Dataset, EvalExample, Split};
use crate::error::{Error, Result};
use crate::model::Model;

/// `1 +` the number of items scoring at least as high as the target, other
/// than the target itself. Ties count against the target.
pub fn rank_of_target(logits: &[f64], target: u32) -> Result<usize> {
    let t = (target as usize)
        .checked_sub(1)
        .filter(|&t| t < logits.len())
        .ok_or(Error::Index {
            index: target as usize,
            bound: logits.len() + 1,
        })?;
    let s = logits[t];
    Ok(1 + logits
        .iter()
        .enumerate()
        .filter(|&(i, &v)| i != t && v >= s)
        .count())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub hr: f64,
    pub ndcg: f64,
    pub mrr: f64,
}

pub fn metrics_at_k(rank: usize, k: usize) -> Metrics {
    if rank == 0 || rank > k {
        return Metrics::default();
    }
    Metrics {
        hr: 1.0,
        ndcg: 1.0 / ((rank + 1) as f64).log2(),
        mrr: 1.0 / rank as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub k: usize,
    /// Push items already in the history (other than the target) to the bottom.
    pub filter_history: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: 10,
            filter_history: false,
        }
    }
}

/// Half-open on the left: `(lo, hi]`; `hi = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthBucket {
    pub lo: usize,
    pub hi: Option<usize>,
}

impl LengthBucket {
    pub fn contains(&self, len: usize) -> bool {
        len > self.lo && self.hi.is_none_or(|h| len <= h)
    }
}

impl fmt::Display for LengthBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hi {
            Some(h) => write!(f, "({},{}]", self.lo, h),
            None => write!(f, "({},inf)", self.lo),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub split: Split,
    pub k: usize,
    pub filter_history: bool,
    pub n_users_evaluated: usize,
    /// Users dropped because their history was empty.
    pub n_skipped: usize,
    /// Means over evaluated users; `None` when nobody was evaluated.
    pub metrics: Option<Metrics>,
    pub buckets: Vec<(LengthBucket, MetricsReport)>,
}

impl MetricsReport {
    fn empty(split: Split, opts: EvalOptions) -> Self {
        Self {
            split,
            k: opts.k,
            filter_history: opts.filter_history,
            n_users_evaluated: 0,
            n_skipped: 0,
            metrics: None,
            buckets: Vec::new(),
        }
    }

    pub fn hr(&self) -> Option<f64> {
        self.metrics.map(|m| m.hr)
    }

    pub fn ndcg(&self) -> Option<f64> {
        self.metrics.map(|m| m.ndcg)
    }

    pub fn mrr(&self) -> Option<f64> {
        self.metrics.map(|m| m.mrr)
    }

    /// `key=value` lines, buckets prefixed with `bucket.<range>.`.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        self.write_kv(&mut out, "");
        for (b, r) in &self.buckets {
            r.write_kv(&mut out, &format!("bucket.{b}."));
        }
        out
    }

    fn write_kv(&self, out: &mut String, prefix: &str) {
        let k = self.k;
        let fmt = |v: Option<f64>| v.map_or("null".to_owned(), |v| format!("{v:.6}"));
        let _ = writeln!(out, "{prefix}split={}", self.split.name());
        let _ = writeln!(out, "{prefix}k={k}");
        let _ = writeln!(out, "{prefix}filter_history={}", self.filter_history);
        let _ = writeln!(out, "{prefix}n_users_evaluated={}", self.n_users_evaluated);
        let _ = writeln!(out, "{prefix}n_skipped={}", self.n_skipped);
        let _ = writeln!(out, "{prefix}hr@{k}={}", fmt(self.hr()));
        let _ = writeln!(out, "{prefix}ndcg@{k}={}", fmt(self.ndcg()));
        let _ = writeln!(out, "{prefix}mrr@{k}={}", fmt(self.mrr()));
    }

    /// One tab-separated record: split, k, users, hr, ndcg, mrr.
    pub fn to_tsv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("null".to_owned(), |v| format!("{v:.6}"));
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.split.name(),
            self.k,
            self.n_users_evaluated,
            fmt(self.hr()),
            fmt(self.ndcg()),
            fmt(self.mrr())
        )
    }
}

/// Evaluates any scorer returning one logit per item (index `i` is item
/// `i + 1`).
pub fn evaluate_with<F>(examples: &[EvalExample], split: Split, opts: EvalOptions, scorer: F) -> Result<MetricsReport>
where
    F: Fn(&EvalExample) -> Result<Vec<f64>> + Sync,
{
    if opts.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let per_user: Vec<Result<Option<Metrics>>> = examples
        .par_iter()
        .map(|ex| {
            if ex.items.is_empty() {
                return Ok(None);
            }
            let mut logits = scorer(ex)?;
            if opts.filter_history {
                for &i in &ex.items {
                    if i != ex.target && i >= 1 && (i as usize) <= logits.len() {
                        logits[i as usize - 1] = f64::NEG_INFINITY;
                    }
                }
            }
            Ok(Some(metrics_at_k(rank_of_target(&logits, ex.target)?, opts.k)))
        })
        .collect();
    let mut report = MetricsReport::empty(split, opts);
    let mut sum = Metrics::default();
    for m in per_user {
        match m? {
            Some(m) => {
                report.n_users_evaluated += 1;
                sum.hr += m.hr;
                sum.ndcg += m.ndcg;
                sum.mrr += m.mrr;
            }
            None => report.n_skipped += 1,
        }
    }
    if report.n_users_evaluated > 0 {
        let n = report.n_users_evaluated as f64;
        report.metrics = Some(Metrics {
            hr: sum.hr / n,
            ndcg: sum.ndcg / n,
            mrr: sum.mrr / n,
        });
    }
    Ok(report)
}

pub fn evaluate_examples(
    model: &Model,
    examples: &[EvalExample],
    split: Split,
    opts: EvalOptions,
) -> Result<MetricsReport> {
    if examples
        .iter()
        .any(|e| e.target as usize > model.n_items() || e.items.iter().any(|&i| i as usize > model.n_items()))
    {
        return Err(Error::VocabularyMismatch(format!(
            "evaluation data references items beyond the model's {} items",
            model.n_items()
        )));
    }
    evaluate_with(examples, split, opts, |ex| {
        let o = model.represent(&ex.items, &ex.intervals)?;
        Ok(model.score(&o))
    })
}

/// Scores every evaluable user's held-out target for `split`.
pub fn evaluate(model: &Model, dataset: &Dataset, split: Split, opts: EvalOptions) -> Result<MetricsReport> {
    check_vocabulary(model, dataset)?;
    evaluate_examples(model, &dataset.eval_examples(split), split, opts)
}

fn check_vocabulary(model: &Model, dataset: &Dataset) -> Result<()> {
    if model.n_items() != dataset.n_items {
        return Err(Error::VocabularyMismatch(format!(
            "model has {} items, dataset has {}",
            model.n_items(),
            dataset.n_items
        )));
    }
    Ok(())
}

/// Buckets from increasing upper edges: `(0,e1], (e1,e2], …`, plus an
/// unbounded bucket past the last edge.
pub fn length_buckets(edges: &[usize]) -> Result<Vec<LengthBucket>> {
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) || edges[0] == 0 {
        return Err(Error::Config(format!("bucket edges must be positive and increasing, got {edges:?}")));
    }
    let mut lo = 0;
    let mut out: Vec<LengthBucket> = edges
        .iter()
        .map(|&hi| {
            let b = LengthBucket { lo, hi: Some(hi) };
            lo = hi;
            b
        })
        .collect();
    out.push(LengthBucket { lo, hi: None });
    Ok(out)
}

/// Overall report with one sub-report per history-length bucket. The
/// unbounded overflow bucket is kept only if it has users.
pub fn evaluate_by_length(
    model: &Model,
    dataset: &Dataset,
    split: Split,
    edges: &[usize],
    opts: EvalOptions,
) -> Result<MetricsReport> {
    check_vocabulary(model, dataset)?;
    let buckets = length_buckets(edges)?;
    let examples = dataset.eval_examples(split);
    let mut report = evaluate_examples(model, &examples, split, opts)?;
    for b in buckets {
        let members: Vec<EvalExample> = examples
            .iter()
            .filter(|e| b.contains(e.history_len()))
            .cloned()
            .collect();
        if b.hi.is_none() && members.is_empty() {
            continue;
        }
        let sub = evaluate_examples(model, &members, split, opts)?;
        report.buckets.push((b, sub));
    }
    Ok(report)
}
