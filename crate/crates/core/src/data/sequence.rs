//! Per-user chronological sequences and the transforms applied to them.

use std::collections::BTreeMap;

use rand::Rng;

use super::ingest::InteractionRecord;
use crate::error::{Error, Result};

/// Time-sorted interactions of one user.
///
/// `intervals[i]` is the gap from `timestamps[i]` to `timestamps[i + 1]`; the
/// last entry is the gap to the next interaction or query time, which is `0`
/// until a query is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSequence {
    pub user_id: u32,
    pub items: Vec<u32>,
    pub timestamps: Vec<u64>,
    pub intervals: Vec<f64>,
}

impl UserSequence {
    /// Builds a sequence from already sorted events, deriving the intervals.
    pub fn from_sorted(user_id: u32, items: Vec<u32>, timestamps: Vec<u64>) -> Self {
        debug_assert_eq!(items.len(), timestamps.len());
        let intervals = raw_intervals(&timestamps);
        Self {
            user_id,
            items,
            timestamps,
            intervals,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// A single interaction cannot form a next-item training target.
    pub fn is_trainable(&self) -> bool {
        self.items.len() >= 2
    }

    /// Prefix of the first `n` events; the last interval is reset to `0`.
    pub fn prefix(&self, n: usize) -> UserSequence {
        UserSequence::from_sorted(
            self.user_id,
            self.items[..n].to_vec(),
            self.timestamps[..n].to_vec(),
        )
    }
}

/// Absolute consecutive gaps, with a trailing `0` for the open end.
pub fn raw_intervals(timestamps: &[u64]) -> Vec<f64> {
    let mut out: Vec<f64> = timestamps
        .windows(2)
        .map(|w| w[1].abs_diff(w[0]) as f64)
        .collect();
    if !timestamps.is_empty() {
        out.push(0.0);
    }
    out
}

/// Groups records per user, sorting each user's events by timestamp (stable,
/// so equal timestamps keep input order).
pub fn build_user_sequences(records: &[InteractionRecord]) -> Result<BTreeMap<u32, UserSequence>> {
    if records.is_empty() {
        return Err(Error::InputDomain("no interaction records".into()));
    }
    let mut per_user: BTreeMap<u32, Vec<(u64, u32)>> = BTreeMap::new();
    for r in records {
        per_user
            .entry(r.user_id)
            .or_default()
            .push((r.timestamp, r.item_id));
    }
    Ok(per_user
        .into_iter()
        .map(|(user, mut events)| {
            events.sort_by_key(|&(t, _)| t);
            let (timestamps, items) = events.into_iter().unzip();
            (user, UserSequence::from_sorted(user, items, timestamps))
        })
        .collect())
}

/// Linear rescaling of raw intervals followed by clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalScaling {
    pub scale: f64,
    pub clamp_max: f64,
}

impl IntervalScaling {
    pub const DEFAULT_CLAMP_MAX: f64 = 10.0;

    pub fn new(scale: f64, clamp_max: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("interval scale must be positive, got {scale}")));
        }
        if !(clamp_max >= 0.0) {
            return Err(Error::Config(format!("clamp_max must be non-negative, got {clamp_max}")));
        }
        Ok(Self { scale, clamp_max })
    }

    #[inline]
    pub fn apply(&self, raw: f64) -> f64 {
        (raw / self.scale).clamp(0.0, self.clamp_max)
    }
}

/// Returns a copy of `seq` with every interval divided by `scale` and
/// clamped to `[0, clamp_max]`.
pub fn normalize_intervals(seq: &UserSequence, scale: f64, clamp_max: f64) -> Result<UserSequence> {
    let s = IntervalScaling::new(scale, clamp_max)?;
    Ok(UserSequence {
        intervals: seq.intervals.iter().map(|&d| s.apply(d)).collect(),
        ..seq.clone()
    })
}

/// Median of all nonzero consecutive gaps, or `None` when there are none.
pub fn median_nonzero_interval<'a>(seqs: impl IntoIterator<Item = &'a UserSequence>) -> Option<f64> {
    let mut gaps: Vec<u64> = seqs
        .into_iter()
        .flat_map(|s| s.timestamps.windows(2).map(|w| w[1].abs_diff(w[0])))
        .filter(|&g| g > 0)
        .collect();
    if gaps.is_empty() {
        return None;
    }
    gaps.sort_unstable();
    let n = gaps.len();
    Some(if n % 2 == 1 {
        gaps[n / 2] as f64
    } else {
        (gaps[n / 2 - 1] as f64 + gaps[n / 2] as f64) / 2.0
    })
}

/// A held-out interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub item: u32,
    pub timestamp: u64,
}

/// Leave-one-out split of one user's sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaveOneOut {
    pub train: UserSequence,
    pub valid: Target,
    pub test: Target,
}

/// Last event → test, second to last → validation, rest → training prefix.
pub fn leave_one_out_split(seq: &UserSequence) -> Result<LeaveOneOut> {
    let n = seq.len();
    if n < 3 {
        return Err(Error::InputDomain(format!(
            "user {} has {n} interactions; leave-one-out needs at least 3",
            seq.user_id
        )));
    }
    let target = |i: usize| Target {
        item: seq.items[i],
        timestamp: seq.timestamps[i],
    };
    Ok(LeaveOneOut {
        train: seq.prefix(n - 2),
        valid: target(n - 2),
        test: target(n - 1),
    })
}

/// Drops each item independently with probability `p`; survivors keep
/// their timestamps, so merged intervals are sums of the dropped gaps.
/// The last item is kept if everything else dropped.
pub fn simulate_partial_observation<R: Rng + ?Sized>(
    seq: &UserSequence,
    p: f64,
    rng: &mut R,
) -> Result<UserSequence> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("drop probability must be in [0, 1), got {p}")));
    }
    if p == 0.0 || seq.is_empty() {
        return Ok(seq.clone());
    }
    let keep: Vec<bool> = (0..seq.len()).map(|_| !rng.random_bool(p)).collect();
    Ok(drop_items(seq, &keep))
}

/// Keeps the events where `keep` is true, recomputing intervals from the
/// surviving timestamps. If nothing survives the last event is kept.
pub fn drop_items(seq: &UserSequence, keep: &[bool]) -> UserSequence {
    assert_eq!(keep.len(), seq.len(), "keep mask length");
    let mut items = Vec::with_capacity(seq.len());
    let mut timestamps = Vec::with_capacity(seq.len());
    for (i, _) in keep.iter().enumerate().filter(|(_, k)| **k) {
        items.push(seq.items[i]);
        timestamps.push(seq.timestamps[i]);
    }
    let mut last_kept = keep.last() == Some(&true);
    if items.is_empty() && !seq.is_empty() {
        items.push(*seq.items.last().unwrap());
        timestamps.push(*seq.timestamps.last().unwrap());
        last_kept = true;
    }
    let mut out = UserSequence::from_sorted(seq.user_id, items, timestamps);
    // the open-ended trailing gap is carried over from the original
    if last_kept {
        *out.intervals.last_mut().unwrap() = *seq.intervals.last().unwrap();
    }
    out
}
