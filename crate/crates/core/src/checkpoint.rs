//! Named-tensor checkpoint container.
//!
//! Layout (little-endian): magic `LGFCKPT1`, `u32` tensor count, then per
//! tensor `u16` name length, UTF-8 name, `u8` rank, `u32` dims, raw `f32`
//! data. Model configuration lives in a human-readable JSON sidecar next to
//! the container (`<path>.meta.json`).

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LGFCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: not a checkpoint container")]
    BadMagic,
    #[error("truncated container")]
    Truncated,
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("tensor name `{0}` longer than 65535 bytes")]
    NameTooLong(String),
    #[error("tensor `{0}` has rank above 255")]
    RankTooLarge(String),
    #[error("duplicate tensor `{0}`")]
    Duplicate(String),
    #[error("missing tensor `{0}`")]
    Missing(String),
    #[error("tensor `{name}`: {source}")]
    Tensor {
        name: String,
        source: TensorError,
    },
    #[error("metadata: {0}")]
    Meta(#[from] serde_json::Error),
}

pub type TensorMap = IndexMap<String, Tensor<f32>>;

pub fn encode(tensors: &TensorMap) -> Result<Vec<u8>, CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len()).map_err(|_| CheckpointError::NameTooLong(name.clone()))?;
        let rank = u8::try_from(t.rank()).map_err(|_| CheckpointError::RankTooLarge(name.clone()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(rank);
        for &d in t.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<TensorMap, CheckpointError> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8).map_err(|_| CheckpointError::BadMagic)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let count = c.u32()?;
    let mut out = TensorMap::new();
    for _ in 0..count {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| CheckpointError::BadName)?
            .to_string();
        let rank = c.u8()? as usize;
        let dims = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&dims, data).map_err(|source| CheckpointError::Tensor {
            name: name.clone(),
            source,
        })?;
        if out.insert(name.clone(), t).is_some() {
            return Err(CheckpointError::Duplicate(name));
        }
    }
    Ok(out)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_tensors(path: &Path, tensors: &TensorMap) -> Result<(), CheckpointError> {
    let bytes = encode(tensors)?;
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_tensors(path: &Path) -> Result<TensorMap, CheckpointError> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}

/// Writes the container and its JSON metadata sidecar.
pub fn save<M: Serialize>(path: &Path, tensors: &TensorMap, meta: &M) -> Result<(), CheckpointError> {
    write_tensors(path, tensors)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn load<M: DeserializeOwned>(path: &Path) -> Result<(TensorMap, M), CheckpointError> {
    let tensors = read_tensors(path)?;
    let meta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    Ok((tensors, meta))
}

/// Tensors whose name starts with `prefix`, with the prefix stripped.
pub fn with_prefix(tensors: &TensorMap, prefix: &str) -> TensorMap {
    tensors
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
        .collect()
}
