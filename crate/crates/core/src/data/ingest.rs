//! Interaction-log parsing and dense id remapping.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// One `(user, item, timestamp)` event after id remapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InteractionRecord {
    pub user_id: u32,
    /// Dense item id in `1..=N`; `0` is reserved for padding.
    pub item_id: u32,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Char(char),
    /// Any run of ASCII whitespace.
    Whitespace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Strict,
    /// Malformed lines are skipped and counted.
    Lenient,
}

/// Column layout of an interaction file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub delimiter: Delimiter,
    pub user_col: usize,
    pub item_col: usize,
    pub time_col: usize,
    pub mode: ParseMode,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            delimiter: Delimiter::Char('\t'),
            user_col: 0,
            item_col: 1,
            time_col: 2,
            mode: ParseMode::Strict,
        }
    }
}

impl ColumnSpec {
    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self.delimiter {
            Delimiter::Char(c) => line.split(c).map(str::trim).collect(),
            Delimiter::Whitespace => line.split_ascii_whitespace().collect(),
        }
    }
}

/// Raw-token to dense-id mapping, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    first_id: u32,
    index: HashMap<String, u32>,
    raw: Vec<String>,
}

impl IdMap {
    pub fn new(first_id: u32) -> Self {
        Self {
            first_id,
            ..Default::default()
        }
    }

    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.first_id + self.raw.len() as u32;
        self.index.insert(token.to_owned(), id);
        self.raw.push(token.to_owned());
        id
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn raw(&self, id: u32) -> Option<&str> {
        id.checked_sub(self.first_id)
            .and_then(|i| self.raw.get(i as usize))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.raw
            .iter()
            .enumerate()
            .map(move |(i, r)| (r.as_str(), self.first_id + i as u32))
    }

    /// Two-column text: raw id, dense id.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for (raw, dense) in self.iter() {
            writeln!(out, "{raw}\t{dense}").expect("write to vec");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, first_id: u32) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut map = IdMap::new(first_id);
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(raw), Some(dense)) = (cols.next(), cols.next()) else {
                return Err(Error::Parse {
                    line: n + 1,
                    message: "expected two columns".into(),
                });
            };
            let dense: u32 = dense.trim().parse().map_err(|_| Error::Parse {
                line: n + 1,
                message: format!("bad dense id `{dense}`"),
            })?;
            if map.intern(raw) != dense {
                return Err(Error::Parse {
                    line: n + 1,
                    message: "dense ids must be contiguous and in order".into(),
                });
            }
        }
        Ok(map)
    }
}

/// Parsed interaction log with its vocabularies.
#[derive(Debug, Clone, Default)]
pub struct InteractionLog {
    pub records: Vec<InteractionRecord>,
    pub users: IdMap,
    /// Items are numbered from 1.
    pub items: IdMap,
    /// Lines dropped in lenient mode.
    pub skipped: usize,
}

impl InteractionLog {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Builds a log from raw `(user, item, timestamp)` triples, remapping ids
    /// the same way the file parser does.
    pub fn from_raw<U: ToString, I: ToString>(rows: impl IntoIterator<Item = (U, I, u64)>) -> Self {
        let mut log = InteractionLog {
            items: IdMap::new(1),
            ..Default::default()
        };
        for (u, i, t) in rows {
            let user_id = log.users.intern(&u.to_string());
            let item_id = log.items.intern(&i.to_string());
            log.records.push(InteractionRecord {
                user_id,
                item_id,
                timestamp: t,
            });
        }
        log
    }

    /// Writes the item mapping next to `path` as `<path>.items` and the user
    /// mapping as `<path>.users`.
    pub fn write_id_maps(&self, path: &Path) -> Result<()> {
        let with_suffix = |s: &str| {
            let mut p = path.as_os_str().to_owned();
            p.push(s);
            std::path::PathBuf::from(p)
        };
        self.items.write(&with_suffix(".items"))?;
        self.users.write(&with_suffix(".users"))
    }
}

/// Parses a delimiter-separated interaction file.
///
/// A first line whose timestamp column is not an integer is treated as a
/// header. Blank lines are ignored.
pub fn parse_interactions(path: &Path, spec: &ColumnSpec) -> Result<InteractionLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions_str(&text, spec)
}

pub fn parse_interactions_str(text: &str, spec: &ColumnSpec) -> Result<InteractionLog> {
    let mut log = InteractionLog {
        items: IdMap::new(1),
        ..Default::default()
    };
    let need = spec.user_col.max(spec.item_col).max(spec.time_col) + 1;
    let mut first_content = true;
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols = spec.split(line);
        let is_first = std::mem::replace(&mut first_content, false);
        let parsed = if cols.len() < need {
            Err(format!("expected at least {need} columns, found {}", cols.len()))
        } else {
            let ts = cols[spec.time_col];
            match ts.parse::<u64>() {
                Ok(t) => Ok((cols[spec.user_col], cols[spec.item_col], t)),
                Err(_) if is_first && ts.parse::<f64>().is_err() && !ts.starts_with('-') => {
                    // header
                    continue;
                }
                Err(_) => Err(format!("bad timestamp `{ts}`")),
            }
        };
        match parsed {
            Ok((u, i, t)) => {
                let user_id = log.users.intern(u);
                let item_id = log.items.intern(i);
                log.records.push(InteractionRecord {
                    user_id,
                    item_id,
                    timestamp: t,
                });
            }
            Err(message) => match spec.mode {
                ParseMode::Strict => {
                    return Err(Error::Parse {
                        line: line_no,
                        message,
                    })
                }
                ParseMode::Lenient => log.skipped += 1,
            },
        }
    }
    Ok(log)
}

/// Writes raw triples in the same delimiter-separated format the parser
/// reads (tab-separated user, item, timestamp).
pub fn write_interactions<U: std::fmt::Display, I: std::fmt::Display>(
    path: &Path,
    rows: impl IntoIterator<Item = (U, I, u64)>,
) -> Result<()> {
    let mut out = Vec::new();
    for (u, i, t) in rows {
        writeln!(out, "{u}\t{i}\t{t}").expect("write to vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
