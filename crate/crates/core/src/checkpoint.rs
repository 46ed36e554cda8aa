//! Binary checkpoint container.
//!
//! All integers are little-endian. Layout, in order:
//!
//! | field            | encoding                                              |
//! |------------------|-------------------------------------------------------|
//! | magic            | 8 bytes `SFRCKPT\0`                                   |
//! | version          | u32 (currently 1)                                     |
//! | config           | u32 byte length + UTF-8 `model.*` key=value text       |
//! | epoch            | u32                                                   |
//! | val_accuracy     | f32 (NaN when unknown)                                |
//! | parameter count  | u32                                                   |
//! | per parameter    | u32 name length, UTF-8 name, u32 rank, rank × u32     |
//! |                  | extents, numel × f32 payload                          |
//!
//! Saving then loading reproduces every parameter bit for bit.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{SfrConfig, SfrModel};
use crate::params::ParamStore;
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: &[u8; 8] = b"SFRCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: u32,
    pub val_accuracy: f32,
}

pub struct Checkpoint {
    pub version: u32,
    pub config: SfrConfig,
    pub meta: CheckpointMeta,
    pub params: ParamStore,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn encode(model: &SfrModel, meta: CheckpointMeta) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_str(&mut out, &model.config().to_kv_text());
    put_u32(&mut out, meta.epoch);
    out.extend_from_slice(&meta.val_accuracy.to_le_bytes());
    put_u32(&mut out, model.params.len() as u32);
    for p in model.params.iter() {
        put_str(&mut out, p.name());
        let shape = p.value().shape();
        put_u32(&mut out, shape.len() as u32);
        for &d in shape {
            put_u32(&mut out, d as u32);
        }
        for v in p.value().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("non-UTF-8 string".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (this build reads {VERSION})"
        )));
    }
    let config = SfrConfig::from_kv_text(&r.string()?)?;
    let meta = CheckpointMeta {
        epoch: r.u32()?,
        val_accuracy: r.f32()?,
    };
    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("parameter {name}: rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Format("overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name, Tensor::new(&shape, data)?)?;
    }
    if !r.buf.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", r.buf.len())));
    }
    Ok(Checkpoint {
        version,
        config,
        meta,
        params,
    })
}

pub fn save(model: &SfrModel, meta: CheckpointMeta, path: &Path) -> Result<()> {
    let bytes = encode(model, meta);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Rebuilds the model described by a checkpoint and loads its parameters.
pub fn load(path: &Path) -> Result<(SfrModel, CheckpointMeta)> {
    read(path)?.into_model()
}

impl Checkpoint {
    pub fn into_model(self) -> Result<(SfrModel, CheckpointMeta)> {
        let mut model = SfrModel::build(&self.config, 0)?;
        model.params.copy_values_from(&self.params).map_err(|e| {
            Error::Format(format!("checkpoint parameters do not match its config: {e}"))
        })?;
        Ok((model, self.meta))
    }
}
