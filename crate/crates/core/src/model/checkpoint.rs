//! Binary checkpoint container.
//!
//! ```text
//! magic "SFMFCKPT" | version u32 | config length u32 | config text
//! tensor count u32 | per tensor: name length u32, name, rank u32,
//!                    extents u64 × rank, values f64 × product
//! SHA-256 of every preceding byte
//! ```
//! All integers and values are little-endian.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::{apply, parse_pairs, render};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{FusionModel, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SFMFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("length {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes the configuration and every parameter.
pub fn write_checkpoint(model: &FusionModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = render(&[model.config()]);
    put_u32(&mut out, config.len())?;
    out.extend_from_slice(config.as_bytes());
    put_u32(&mut out, model.params().len())?;
    for (name, t) in model.params().iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("extent {v} too large")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }
}

/// Rebuilds a model from checkpoint bytes. The digest, the configuration and
/// the exact parameter set are all verified.
pub fn read_checkpoint(bytes: &[u8]) -> Result<FusionModel> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + DIGEST_LEN {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if &body[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: 8,
    };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config_text = r.string()?;
    let mut config = ModelConfig::default();
    apply(&parse_pairs(&config_text)?, &mut [&mut config])?;
    let mut model = FusionModel::new(config)?;

    let count = r.u32()?;
    if count != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {count}",
            model.params().len()
        )));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: extent overflow")))?;
        let raw = r.take(
            len.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let id = model
            .params()
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
        model
            .params_mut()
            .set(&name, Tensor::new(&shape, data)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &FusionModel) -> Result<()> {
    let bytes = write_checkpoint(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<FusionModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
