//! Synthetic dataset whose items are a pure function of interaction time.
//!
//! Each user draws a period `t ∈ [1, n_items]`; every interaction happens at
//! a uniform timestamp in `[0, t_max)` and consumes item `timestamp % t`.
//! Knowing the query time and the period therefore identifies the next item
//! exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyConfig {
    pub n_users: u32,
    pub n_items: u32,
    pub seq_len: u32,
    pub t_max: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_users: 100,
            n_items: 100,
            seq_len: 100,
            t_max: 10_000,
        }
    }
}

/// One raw toy event; ids are the generator's own (users `0..n_users`,
/// items `0..n_items`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ToyRecord {
    pub user: u32,
    pub item: u32,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyDataset {
    pub records: Vec<ToyRecord>,
    /// Period drawn for each user, indexed by user.
    pub periods: Vec<u32>,
}

impl ToyDataset {
    /// The item the construction assigns to `user` at time `timestamp`.
    pub fn oracle_item(&self, user: u32, timestamp: u64) -> u32 {
        (timestamp % self.periods[user as usize] as u64) as u32
    }

    pub fn raw_rows(&self) -> impl Iterator<Item = (u32, u32, u64)> + '_ {
        self.records.iter().map(|r| (r.user, r.item, r.timestamp))
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 || self.seq_len == 0 || self.t_max == 0 {
            return Err(Error::Config(format!("toy parameters must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Generates the dataset. Records are emitted per user in generation
    /// order (timestamps unsorted).
    pub fn generate(&self, seed: u64) -> Result<ToyDataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::with_capacity((self.n_users * self.seq_len) as usize);
        let mut periods = Vec::with_capacity(self.n_users as usize);
        for user in 0..self.n_users {
            let period = rng.random_range(1..=self.n_items);
            periods.push(period);
            for _ in 0..self.seq_len {
                let timestamp = rng.random_range(0..self.t_max);
                records.push(ToyRecord {
                    user,
                    item: (timestamp % period as u64) as u32,
                    timestamp,
                });
            }
        }
        Ok(ToyDataset { records, periods })
    }
}

/// Convenience wrapper with explicit parameters.
pub fn generate_toy_dataset(
    n_users: u32,
    n_items: u32,
    seq_len: u32,
    t_max: u64,
    seed: u64,
) -> Result<ToyDataset> {
    ToyConfig {
        n_users,
        n_items,
        seq_len,
        t_max,
    }
    .generate(seed)
}
