//! Binary checkpoint container.
//!
//! Layout (little endian):
//! `SS4RCKPT` | version u32 | config length u32 | config text |
//! tensor count u32 | per tensor: name length u16, name, element count u64,
//! f64 values | sha256 of everything before it.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::params::ParamSet;

const MAGIC: &[u8; 8] = b"SS4RCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = model.config.to_kv();
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(config.as_bytes());
    let tensors = model.params.named_tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, values) in tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptCheckpoint("unexpected end of data".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn utf8(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::CorruptCheckpoint("invalid utf-8".into()))
    }
}

/// Reads a checkpoint, rebuilding the model from its stored config.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() + DIGEST_LEN {
        return Err(Error::CorruptCheckpoint("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let config_len = r.u32()? as usize;
    let config = ModelConfig::from_kv(r.utf8(config_len)?)?;
    let mut model = Model::new(config, 0)?;
    let count = r.u32()? as usize;
    let expected = model.params.named_tensors().len();
    if count != expected {
        return Err(Error::CorruptCheckpoint(format!(
            "{count} tensors stored, config implies {expected}"
        )));
    }
    let mut failure = None;
    model.params.visit_mut("", &mut |name, tensor| {
        if failure.is_some() {
            return;
        }
        let res = (|| -> Result<()> {
            let n = r.u16()? as usize;
            let stored = r.utf8(n)?;
            if stored != name {
                return Err(Error::CorruptCheckpoint(format!("expected tensor `{name}`, found `{stored}`")));
            }
            let len = r.u64()? as usize;
            if len != tensor.len() {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor `{name}` has {len} values, expected {}",
                    tensor.len()
                )));
            }
            for v in tensor.iter_mut() {
                *v = f64::from_bits(r.u64()?);
            }
            Ok(())
        })();
        if let Err(e) = res {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    Ok(model)
}

/// Like [`load_checkpoint`], but rejects a checkpoint whose architecture
/// differs from `expected`. Dropout and scan mode are runtime settings and
/// are taken from `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Model> {
    let mut model = load_checkpoint(path)?;
    let c = &model.config;
    let mut diffs = Vec::new();
    let mut check = |key: &str, stored: String, wanted: String| {
        if stored != wanted {
            diffs.push(format!("{key}: checkpoint has {stored}, config has {wanted}"));
        }
    };
    check("n_items", c.n_items.to_string(), expected.n_items.to_string());
    check("embed_dim", c.embed_dim.to_string(), expected.embed_dim.to_string());
    check("state_dim", c.state_dim.to_string(), expected.state_dim.to_string());
    check("n_blocks", c.n_blocks.to_string(), expected.n_blocks.to_string());
    check("ablation", c.ablation.to_string(), expected.ablation.to_string());
    if !diffs.is_empty() {
        return Err(Error::ConfigMismatch(diffs.join("; ")));
    }
    model.config.dropout = expected.dropout;
    model.config.scan = expected.scan;
    model.config.max_len = expected.max_len;
    Ok(model)
}
