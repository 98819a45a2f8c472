//! Left-padded fixed-width batches.

use std::ops::Range;

use super::sequence::UserSequence;
use crate::error::{Error, Result};

/// One unpadded row: items, their (normalized) forward-looking intervals,
/// and the target at each position (`0` where there is none).
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRow {
    pub items: Vec<u32>,
    pub intervals: Vec<f64>,
    pub targets: Vec<u32>,
}

impl SequenceRow {
    /// Teacher-forced row: position `i` predicts `items[i + 1]`.
    pub fn teacher_forced(seq: &UserSequence) -> Self {
        let mut targets: Vec<u32> = seq.items.iter().skip(1).copied().collect();
        if !seq.is_empty() {
            targets.push(0);
        }
        Self {
            items: seq.items.clone(),
            intervals: seq.intervals.clone(),
            targets,
        }
    }

    /// Row whose only target is `target` at the last position.
    pub fn query(items: Vec<u32>, intervals: Vec<f64>, target: u32) -> Self {
        let mut targets = vec![0; items.len()];
        if let Some(last) = targets.last_mut() {
            *last = target;
        }
        Self {
            items,
            intervals,
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// `rows × len` grids, row-major. Padding (item `0`, interval `0`, target
/// `0`) always precedes the valid positions of a row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub rows: usize,
    pub len: usize,
    pub item_ids: Vec<u32>,
    pub intervals: Vec<f64>,
    pub targets: Vec<u32>,
    pub valid_mask: Vec<bool>,
}

impl Batch {
    /// Packs rows into a batch of width `len`, keeping the most recent
    /// `len` positions of longer rows.
    pub fn from_rows(rows: &[SequenceRow], len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("max sequence length must be at least 1".into()));
        }
        let n = rows.len() * len;
        let mut batch = Batch {
            rows: rows.len(),
            len,
            item_ids: vec![0; n],
            intervals: vec![0.0; n],
            targets: vec![0; n],
            valid_mask: vec![false; n],
        };
        for (b, row) in rows.iter().enumerate() {
            if row.intervals.len() != row.len() || row.targets.len() != row.len() {
                return Err(Error::Shape(format!(
                    "row {b}: {} items, {} intervals, {} targets",
                    row.len(),
                    row.intervals.len(),
                    row.targets.len()
                )));
            }
            if row.items.contains(&0) {
                return Err(Error::InputDomain(format!("row {b} contains the padding id 0")));
            }
            let keep = row.len().min(len);
            let src = row.len() - keep;
            let dst = b * len + (len - keep);
            batch.item_ids[dst..dst + keep].copy_from_slice(&row.items[src..]);
            batch.intervals[dst..dst + keep].copy_from_slice(&row.intervals[src..]);
            batch.targets[dst..dst + keep].copy_from_slice(&row.targets[src..]);
            batch.valid_mask[dst..dst + keep].fill(true);
        }
        Ok(batch)
    }

    /// Positions of row `b` that hold real items.
    pub fn valid_range(&self, b: usize) -> Range<usize> {
        let row = &self.valid_mask[b * self.len..(b + 1) * self.len];
        let first = row.iter().position(|v| *v).unwrap_or(self.len);
        first..self.len
    }

    /// Row `b` with padding stripped.
    pub fn unpad(&self, b: usize) -> SequenceRow {
        let r = self.valid_range(b);
        let off = b * self.len;
        SequenceRow {
            items: self.item_ids[off + r.start..off + r.end].to_vec(),
            intervals: self.intervals[off + r.start..off + r.end].to_vec(),
            targets: self.targets[off + r.start..off + r.end].to_vec(),
        }
    }

    pub fn n_targets(&self) -> usize {
        self.targets.iter().filter(|&&t| t != 0).count()
    }
}

/// Teacher-forced batches of at most `batch_size` rows each, in input order.
pub fn make_batches(seqs: &[UserSequence], max_len: usize, batch_size: usize) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let rows: Vec<SequenceRow> = seqs.iter().map(SequenceRow::teacher_forced).collect();
    rows.chunks(batch_size)
        .map(|chunk| Batch::from_rows(chunk, max_len))
        .collect()
}
