use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernels::scan::ScanMode;

/// Which layers of each block are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Ablation {
    #[default]
    Full,
    /// Every valid interval is replaced by `1`.
    IgnoreTime,
    /// Time-aware layers only.
    S5Only,
    /// Selective layers only.
    S6Only,
}

impl Ablation {
    pub fn has_time_layer(self) -> bool {
        !matches!(self, Ablation::S6Only)
    }

    pub fn has_selective_layer(self) -> bool {
        !matches!(self, Ablation::S5Only)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::IgnoreTime => "ignore_time",
            Ablation::S5Only => "s5_only",
            Ablation::S6Only => "s6_only",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "ignore_time" | "ignore" => Ok(Ablation::IgnoreTime),
            "s5_only" => Ok(Ablation::S5Only),
            "s6_only" => Ok(Ablation::S6Only),
            other => Err(Error::Config(format!("unknown ablation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_items: usize,
    pub embed_dim: usize,
    /// Time-aware layers keep `state_dim / 2` conjugate representatives.
    pub state_dim: usize,
    pub n_blocks: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub ablation: Ablation,
    pub scan: ScanMode,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_items: 0,
            embed_dim: 64,
            state_dim: 32,
            n_blocks: 2,
            max_len: 50,
            dropout: 0.2,
            ablation: Ablation::Full,
            scan: ScanMode::Sequential,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_items == 0 {
            return fail("n_items must be positive".into());
        }
        if self.embed_dim == 0 || self.state_dim == 0 || self.n_blocks == 0 || self.max_len == 0 {
            return fail(format!(
                "embed_dim, state_dim, n_blocks and max_len must be positive (got {}, {}, {}, {})",
                self.embed_dim, self.state_dim, self.n_blocks, self.max_len
            ));
        }
        if self.ablation.has_time_layer() && self.state_dim % 2 != 0 {
            return fail(format!("state_dim must be even, got {}", self.state_dim));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.layer_norm_eps >= 0.0) {
            return fail("layer_norm_eps must be non-negative".into());
        }
        Ok(())
    }

    /// `key=value` lines in a fixed order; stored in checkpoint headers.
    pub fn to_kv(&self) -> String {
        format!(
            "n_items={}\nembed_dim={}\nstate_dim={}\nn_blocks={}\nmax_len={}\ndropout={:?}\nablation={}\nscan={}\nlayer_norm_eps={:?}\n",
            self.n_items,
            self.embed_dim,
            self.state_dim,
            self.n_blocks,
            self.max_len,
            self.dropout,
            self.ablation,
            self.scan.name(),
            self.layer_norm_eps,
        )
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = ModelConfig::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed line `{line}`")))?;
            c.set(k.trim(), v.trim())?;
        }
        Ok(c)
    }

    /// Sets one field by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value `{v}` for `{k}`")))
        }
        match key {
            "n_items" => self.n_items = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "state_dim" => self.state_dim = num(key, value)?,
            "n_blocks" | "blocks" => self.n_blocks = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "ablation" => self.ablation = value.parse()?,
            "scan" => self.scan = value.parse().map_err(Error::Config)?,
            "layer_norm_eps" => self.layer_norm_eps = num(key, value)?,
            other => return Err(Error::UnknownKey(other.to_owned())),
        }
        Ok(())
    }
}
