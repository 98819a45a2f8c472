//! Split dataset: training prefixes, held-out targets and interval scaling.

use std::collections::BTreeMap;

use rand::Rng;

use super::batch::SequenceRow;
use super::ingest::InteractionLog;
use super::sequence::{
    build_user_sequences, leave_one_out_split, median_nonzero_interval, raw_intervals,
    simulate_partial_observation, IntervalScaling, LeaveOneOut, UserSequence,
};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserData {
    pub sequence: UserSequence,
    /// `None` for users with fewer than three interactions.
    pub split: Option<LeaveOneOut>,
}

impl UserData {
    /// The part of the sequence the model may train on.
    pub fn training_sequence(&self) -> &UserSequence {
        match &self.split {
            Some(s) => &s.train,
            None => &self.sequence,
        }
    }
}

/// A held-out query: history, forward-looking intervals (the last one spans
/// to the target's timestamp) and the target item.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalExample {
    pub user_id: u32,
    pub items: Vec<u32>,
    pub intervals: Vec<f64>,
    pub target: u32,
}

impl EvalExample {
    pub fn history_len(&self) -> usize {
        self.items.len()
    }

    pub fn to_row(&self) -> SequenceRow {
        SequenceRow::query(self.items.clone(), self.intervals.clone(), self.target)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_items: usize,
    pub users: Vec<UserData>,
    pub scaling: IntervalScaling,
}

impl Dataset {
    /// Splits every user leave-one-out and fits the interval scale to the
    /// training prefixes (median nonzero gap) unless `scale` is given.
    pub fn new(
        sequences: BTreeMap<u32, UserSequence>,
        n_items: usize,
        scale: Option<f64>,
        clamp_max: f64,
    ) -> Result<Self> {
        let users: Vec<UserData> = sequences
            .into_values()
            .map(|sequence| {
                let split = leave_one_out_split(&sequence).ok();
                UserData { sequence, split }
            })
            .collect();
        let scale = match scale {
            Some(s) => s,
            None => median_nonzero_interval(users.iter().map(UserData::training_sequence)).unwrap_or(1.0),
        };
        let scaling = IntervalScaling::new(scale, clamp_max)?;
        Ok(Self {
            n_items,
            users,
            scaling,
        })
    }

    pub fn from_log(log: &InteractionLog, scale: Option<f64>, clamp_max: f64) -> Result<Self> {
        let seqs = build_user_sequences(&log.records)?;
        Self::new(seqs, log.n_items(), scale, clamp_max)
    }

    pub fn n_interactions(&self) -> usize {
        self.users.iter().map(|u| u.sequence.len()).sum()
    }

    /// Users that take part in leave-one-out evaluation.
    pub fn n_evaluable(&self) -> usize {
        self.users.iter().filter(|u| u.split.is_some()).count()
    }

    fn normalized(&self, seq: &UserSequence) -> UserSequence {
        UserSequence {
            intervals: seq.intervals.iter().map(|&d| self.scaling.apply(d)).collect(),
            ..seq.clone()
        }
    }

    /// Normalized training sequences with at least one target.
    pub fn training_sequences(&self) -> Vec<UserSequence> {
        self.users
            .iter()
            .map(UserData::training_sequence)
            .filter(|s| s.is_trainable())
            .map(|s| self.normalized(s))
            .collect()
    }

    /// Training sequences after independent random item drops.
    pub fn dropped_training_sequences<R: Rng + ?Sized>(&self, p: f64, rng: &mut R) -> Result<Vec<UserSequence>> {
        let mut out = Vec::new();
        for u in &self.users {
            let s = u.training_sequence();
            if !s.is_trainable() {
                continue;
            }
            let dropped = simulate_partial_observation(s, p, rng)?;
            if dropped.is_trainable() {
                out.push(self.normalized(&dropped));
            }
        }
        Ok(out)
    }

    /// Held-out queries for `split`, one per evaluable user.
    pub fn eval_examples(&self, split: Split) -> Vec<EvalExample> {
        self.users
            .iter()
            .filter_map(|u| u.split.as_ref().map(|s| self.eval_example(u.sequence.user_id, s, split)))
            .collect()
    }

    fn eval_example(&self, user_id: u32, s: &LeaveOneOut, split: Split) -> EvalExample {
        let mut items = s.train.items.clone();
        let mut timestamps = s.train.timestamps.clone();
        let target = match split {
            Split::Valid => s.valid,
            Split::Test => {
                items.push(s.valid.item);
                timestamps.push(s.valid.timestamp);
                s.test
            }
        };
        let mut intervals = raw_intervals(&timestamps);
        if let (Some(last), Some(t)) = (intervals.last_mut(), timestamps.last()) {
            *last = target.timestamp.abs_diff(*t) as f64;
        }
        EvalExample {
            user_id,
            items,
            intervals: intervals.into_iter().map(|d| self.scaling.apply(d)).collect(),
            target: target.item,
        }
    }
}
