//! Named-parameter checkpoint file.
//!
//! Layout (little-endian): magic `LVRW`, version byte, 8-byte config digest,
//! u64 step, u64 optimizer update count, u64 skipped updates, u32 parameter
//! count, then per parameter: u16 name length, name, u8 rank, u32 dims,
//! f64 values, u8 mask flag (+ one byte per entry), f64 first and second
//! moments. A trailing 8-byte SHA-256 prefix guards the whole file.

use std::path::Path;

use super::layers::Module;
use super::tensor::{Parameter, Tensor};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LVRW";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub digest: [u8; 8],
    pub step: u64,
    pub adam_t: u64,
    pub adam_skipped: u64,
    pub params: Vec<Parameter>,
}

impl Checkpoint {
    pub fn capture(module: &dyn Module, digest: [u8; 8], step: u64, adam_t: u64, adam_skipped: u64) -> Self {
        let mut params = Vec::new();
        module.visit(&mut |p| params.push(p.clone()));
        params.iter_mut().for_each(|p| p.zero_grad());
        Self {
            digest,
            step,
            adam_t,
            adam_skipped,
            params,
        }
    }

    /// Copies values, masks and moments into `module`, matching by name.
    pub fn restore_into(&self, module: &mut dyn Module) -> Result<()> {
        let mut seen = 0usize;
        let mut err = None;
        module.visit_mut(&mut |p| {
            if err.is_some() {
                return;
            }
            match self.params.iter().find(|q| q.name == p.name) {
                Some(q) if q.value.shape == p.value.shape => {
                    p.value = q.value.clone();
                    p.mask = q.mask.clone();
                    p.prunable = q.prunable;
                    p.adam_m = q.adam_m.clone();
                    p.adam_v = q.adam_v.clone();
                    p.zero_grad();
                    seen += 1;
                }
                Some(q) => {
                    err = Some(Error::Shape(format!(
                        "parameter {} has shape {:?} in checkpoint, {:?} in model",
                        p.name, q.value.shape, p.value.shape
                    )))
                }
                None => err = Some(Error::Format(format!("checkpoint lacks parameter {}", p.name))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != self.params.len() {
            return Err(Error::Format("checkpoint holds parameters the model does not".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(MAGIC);
        w.u8(VERSION);
        w.bytes(&self.digest);
        w.u64(self.step);
        w.u64(self.adam_t);
        w.u64(self.adam_skipped);
        w.u32(self.params.len() as u32);
        for p in &self.params {
            w.u16(p.name.len() as u16);
            w.bytes(p.name.as_bytes());
            w.u8(p.value.shape.len() as u8);
            for &d in &p.value.shape {
                w.u32(d as u32);
            }
            w.f64s(p.values());
            match &p.mask {
                Some(m) => {
                    w.u8(1);
                    w.bytes(&m.iter().map(|&b| b as u8).collect::<Vec<_>>());
                }
                None => w.u8(0),
            }
            w.u8(p.prunable as u8);
            w.f64s(&p.adam_m);
            w.f64s(&p.adam_v);
        }
        w.finish_with_checksum()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::with_checksum(bytes, "checkpoint")?;
        r.expect_magic(MAGIC)?;
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Version(format!("checkpoint version {version} is not supported")));
        }
        let digest = r.digest()?;
        let step = r.u64()?;
        let adam_t = r.u64()?;
        let adam_skipped = r.u64()?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format("checkpoint: bad parameter name".into()))?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let values = r.f64s(n)?;
            let mask = match r.u8()? {
                0 => None,
                1 => Some(r.take(n)?.iter().map(|&b| b != 0).collect()),
                _ => return Err(Error::Format("checkpoint: bad mask flag".into())),
            };
            let prunable = r.u8()? != 0;
            let mut p = Parameter::new(name, Tensor::new(shape, values)?);
            p.mask = mask;
            p.prunable = prunable;
            p.adam_m = r.f64s(n)?;
            p.adam_v = r.f64s(n)?;
            params.push(p);
        }
        r.finish()?;
        Ok(Self {
            digest,
            step,
            adam_t,
            adam_skipped,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
