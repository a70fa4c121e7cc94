//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "ESEGCKPT"
//! version      u32
//! arch_len     u32, then arch tag (UTF-8)
//! scalar       u8       0 = f32, 1 = f64
//! config_len   u32, then TrainConfig as JSON (UTF-8)
//! num_params   u32
//! params       num_params scalars, little-endian bit patterns
//! ```

use std::path::Path;

use super::{ModelParams, TrainConfig, ARCHITECTURE, NUM_PARAMS};
use crate::error::{Error, Result};
use crate::scalar::{Real, ScalarKind};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ESEGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub params: ModelParams<T>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn new(config: TrainConfig, params: ModelParams<T>) -> Self {
        Self { config, params }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = serde_json::to_vec(&self.config)?;
        let mut out = Vec::with_capacity(64 + config.len() + NUM_PARAMS * T::KIND.byte_width());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(ARCHITECTURE.len() as u32).to_le_bytes());
        out.extend_from_slice(ARCHITECTURE.as_bytes());
        out.push(match T::KIND {
            ScalarKind::F32 => 0,
            ScalarKind::F64 => 1,
        });
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&(NUM_PARAMS as u32).to_le_bytes());
        for &v in self.params.values() {
            v.write_le(&mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).map_err(|_| bad("not a checkpoint"))? != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let n = r.u32()? as usize;
        let arch = r.take(n)?;
        if arch != ARCHITECTURE.as_bytes() {
            return Err(bad(format!(
                "architecture {:?} does not match {ARCHITECTURE:?}",
                String::from_utf8_lossy(arch)
            )));
        }
        let kind = match r.take(1)?[0] {
            0 => ScalarKind::F32,
            1 => ScalarKind::F64,
            k => return Err(bad(format!("unknown scalar tag {k}"))),
        };
        if kind != T::KIND {
            return Err(bad(format!("stored as {kind:?}, requested {:?}", T::KIND)));
        }
        let n = r.u32()? as usize;
        let config: TrainConfig = serde_json::from_slice(r.take(n)?)?;
        let count = r.u32()? as usize;
        if count != NUM_PARAMS {
            return Err(bad(format!("{count} parameters, expected {NUM_PARAMS}")));
        }
        let w = kind.byte_width();
        let raw = r.take(count * w)?;
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let values = raw.chunks_exact(w).map(T::read_le).collect();
        Ok(Self {
            config,
            params: ModelParams::from_values(values)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
