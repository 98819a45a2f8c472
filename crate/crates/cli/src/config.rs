//! Flat dotted `key=value` run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use ss4rec::data::{ColumnSpec, Delimiter, IntervalScaling, ParseMode};
use ss4rec::evaluator::EvalOptions;
use ss4rec::trainer::TrainConfig;
use ss4rec::{Error, ModelConfig, Result};

/// Prefix of environment overrides: `model.embed_dim` is read from
/// `SS4REC_MODEL_EMBED_DIM`.
pub const ENV_PREFIX: &str = "SS4REC_";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_path: Option<PathBuf>,
    pub columns: ColumnSpec,
    /// `n_items` is always taken from the data.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    /// `None` fits the median nonzero training gap.
    pub interval_scale: Option<f64>,
    pub interval_clamp_max: f64,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_path: None,
            columns: ColumnSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            interval_scale: None,
            interval_clamp_max: IntervalScaling::DEFAULT_CLAMP_MAX,
            output_dir: None,
        }
    }
}

fn delimiter_name(d: Delimiter) -> String {
    match d {
        Delimiter::Whitespace => "whitespace".into(),
        Delimiter::Char('\t') => "tab".into(),
        Delimiter::Char(',') => "comma".into(),
        Delimiter::Char(c) => c.to_string(),
    }
}

fn parse_delimiter(v: &str) -> Result<Delimiter> {
    match v {
        "tab" | "\\t" => Ok(Delimiter::Char('\t')),
        "comma" => Ok(Delimiter::Char(',')),
        "whitespace" | "space" => Ok(Delimiter::Whitespace),
        s if s.chars().count() == 1 => Ok(Delimiter::Char(s.chars().next().unwrap())),
        other => Err(Error::Config(format!("invalid delimiter `{other}`"))),
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid value `{v}` for `{key}`"))),
    }
}

impl RunConfig {
    /// Applies one dotted key. Unknown keys are reported by full name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let unknown = || Error::UnknownKey(key.to_owned());
        let (section, field) = key.split_once('.').ok_or_else(unknown)?;
        let res = match (section, field) {
            ("data", "path") => {
                self.data_path = (!value.is_empty()).then(|| PathBuf::from(value));
                Ok(())
            }
            ("data", "delimiter") => parse_delimiter(value).map(|d| self.columns.delimiter = d),
            ("data", "user_col") => parse(key, value).map(|v| self.columns.user_col = v),
            ("data", "item_col") => parse(key, value).map(|v| self.columns.item_col = v),
            ("data", "time_col") => parse(key, value).map(|v| self.columns.time_col = v),
            ("data", "mode") => match value {
                "strict" => Ok(self.columns.mode = ParseMode::Strict),
                "lenient" => Ok(self.columns.mode = ParseMode::Lenient),
                _ => Err(Error::Config(format!("invalid value `{value}` for `{key}`"))),
            },
            ("model", "n_items") => Err(unknown()),
            ("model", f) => self.model.set(f, value),
            ("train", f) => self.train.set(f, value),
            ("eval", "k") => parse(key, value).map(|v| self.eval.k = v),
            ("eval", "filter_history") => parse_bool(key, value).map(|v| self.eval.filter_history = v),
            ("intervals", "scale") => {
                self.interval_scale = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                };
                Ok(())
            }
            ("intervals", "clamp_max") => parse(key, value).map(|v| self.interval_clamp_max = v),
            ("output", "dir") => {
                self.output_dir = (!value.is_empty()).then(|| PathBuf::from(value));
                Ok(())
            }
            _ => Err(unknown()),
        };
        // report nested unknown keys with their section
        res.map_err(|e| match e {
            Error::UnknownKey(_) => unknown(),
            e => e,
        })
    }

    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected key=value, found `{line}`"),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        self.apply_kv_text(&text)
    }

    /// Applies `SS4REC_*` variables for every known key.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        for key in self.keys() {
            if let Some(v) = lookup(&env_var_name(&key)) {
                self.set(&key, &v)?;
            }
        }
        Ok(())
    }

    pub fn keys(&self) -> Vec<String> {
        self.to_kv()
            .lines()
            .filter_map(|l| l.split_once('=').map(|(k, _)| k.to_owned()))
            .collect()
    }

    /// Every setting as `key=value` lines; reading them back reproduces the
    /// configuration exactly.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        put("data.path", path(&self.data_path));
        put("data.delimiter", delimiter_name(self.columns.delimiter));
        put("data.user_col", self.columns.user_col.to_string());
        put("data.item_col", self.columns.item_col.to_string());
        put("data.time_col", self.columns.time_col.to_string());
        put(
            "data.mode",
            match self.columns.mode {
                ParseMode::Strict => "strict",
                ParseMode::Lenient => "lenient",
            }
            .into(),
        );
        for line in self.model.to_kv().lines() {
            if let Some((k, v)) = line.split_once('=') {
                if k != "n_items" {
                    put(&format!("model.{k}"), v.to_owned());
                }
            }
        }
        for line in self.train.to_kv().lines() {
            if let Some((k, v)) = line.split_once('=') {
                put(&format!("train.{k}"), v.to_owned());
            }
        }
        put("eval.k", self.eval.k.to_string());
        put("eval.filter_history", self.eval.filter_history.to_string());
        put(
            "intervals.scale",
            self.interval_scale.map_or("auto".to_owned(), |s| format!("{s:?}")),
        );
        put("intervals.clamp_max", format!("{:?}", self.interval_clamp_max));
        put("output.dir", path(&self.output_dir));
        out
    }
}

pub fn env_var_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_ascii_uppercase())
}
