//! Binary parameter format (`.fedw`).
//!
//! ```text
//! magic "FEDW" | version u16 | body_len u64 | body | crc32 u32
//! body = dims (5 × u64) | count u32 | count × tensor
//! tensor = name_len u16 | name | rank u8 | rank × u64 | f64 × numel
//! ```
//!
//! Integers and floats are little-endian. The checksum covers every byte
//! before it.

use std::path::Path;

use thiserror::Error;

use crate::model::{ModelDims, ModelParams, PARAM_NAMES};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FEDW";
pub const VERSION: u16 = 1;
const HEADER: usize = 4 + 2 + 8;
const TRAILER: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated input: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("invalid content: {0}")]
    Invalid(String),
}

pub fn serialize_params(params: &ModelParams) -> Vec<u8> {
    let mut body = Vec::with_capacity(64 + params.num_scalars() * 8);
    let d = &params.dims;
    for v in [d.vocab_in, d.vocab_out, d.embed_dim, d.hidden_dim, d.attention_dim] {
        body.extend_from_slice(&(v as u64).to_le_bytes());
    }
    body.extend_from_slice(&(PARAM_NAMES.len() as u32).to_le_bytes());
    for (name, t) in params.named() {
        body.extend_from_slice(&(name.len() as u16).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.push(t.rank() as u8);
        for &s in t.shape() {
            body.extend_from_slice(&(s as u64).to_le_bytes());
        }
        for &x in t.data() {
            body.extend_from_slice(&x.to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(HEADER + body.len() + TRAILER);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(DecodeError::Truncated {
            needed: self.pos.saturating_add(n),
            available: self.buf.len(),
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize, DecodeError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| DecodeError::Invalid(format!("size {v} does not fit in memory")))
    }
}

fn need(bytes: &[u8], needed: usize) -> Result<(), DecodeError> {
    if bytes.len() < needed {
        Err(DecodeError::Truncated {
            needed,
            available: bytes.len(),
        })
    } else {
        Ok(())
    }
}

pub fn deserialize_params(bytes: &[u8]) -> Result<ModelParams, DecodeError> {
    need(bytes, MAGIC.len())?;
    if &bytes[..4] != MAGIC {
        return Err(DecodeError::BadMagic(bytes[..4].try_into().expect("4 bytes")));
    }
    need(bytes, 6)?;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(DecodeError::UnsupportedVersion(version));
    }
    need(bytes, HEADER)?;
    let body_len = u64::from_le_bytes(bytes[6..HEADER].try_into().expect("8 bytes"));
    let total = usize::try_from(body_len)
        .ok()
        .and_then(|b| b.checked_add(HEADER + TRAILER))
        .ok_or_else(|| DecodeError::Invalid(format!("body length {body_len} is absurd")))?;
    need(bytes, total)?;
    if bytes.len() > total {
        return Err(DecodeError::Invalid(format!("{} trailing bytes", bytes.len() - total)));
    }
    let covered = &bytes[..total - TRAILER];
    let stored = u32::from_le_bytes(bytes[total - TRAILER..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(covered);
    if stored != computed {
        return Err(DecodeError::Checksum { stored, computed });
    }

    let mut r = Reader {
        buf: &covered[HEADER..],
        pos: 0,
    };
    let dims = ModelDims {
        vocab_in: r.usize()?,
        vocab_out: r.usize()?,
        embed_dim: r.usize()?,
        hidden_dim: r.usize()?,
        attention_dim: r.usize()?,
    };
    dims.validate().map_err(|e| DecodeError::Invalid(e.to_string()))?;
    let count = r.u32()? as usize;
    if count != PARAM_NAMES.len() {
        return Err(DecodeError::Invalid(format!("expected {} tensors, found {count}", PARAM_NAMES.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for expected in PARAM_NAMES {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| DecodeError::Invalid("tensor name is not UTF-8".into()))?;
        if name != expected {
            return Err(DecodeError::Invalid(format!("expected tensor {expected}, found {name}")));
        }
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &s| acc.checked_mul(s))
            .ok_or_else(|| DecodeError::Invalid(format!("shape {shape:?} overflows")))?;
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| DecodeError::Invalid("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(shape, data).map_err(|e| DecodeError::Invalid(e.to_string()))?);
    }
    if r.pos != r.buf.len() {
        return Err(DecodeError::Invalid("unparsed bytes after last tensor".into()));
    }
    ModelParams::from_tensors(dims, tensors).map_err(|e| DecodeError::Invalid(e.to_string()))
}

/// File name of the checkpoint written after round `t`.
pub fn checkpoint_name(round: usize) -> String {
    format!("round_{round}.fedw")
}

/// Writes through a temporary file so a crash never leaves a torn checkpoint.
pub fn write_checkpoint(path: &Path, params: &ModelParams) -> crate::Result<()> {
    let tmp = path.with_extension("fedw.tmp");
    std::fs::write(&tmp, serialize_params(params)).map_err(crate::Error::file(&tmp))?;
    std::fs::rename(&tmp, path).map_err(crate::Error::file(path))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> crate::Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(crate::Error::file(path))?;
    Ok(deserialize_params(&bytes)?)
}
