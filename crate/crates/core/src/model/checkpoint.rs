//! Binary tensor container: `NATLAB1`, then per tensor a little-endian u32
//! name length, the name, u32 rank, u32 dims, and row-major f32 values.

use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::kv::write_atomic;

pub const MAGIC: &[u8; 7] = b"NATLAB1";

pub fn encode(model: &Model<f32>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for ((name, shape), data) in model.names().iter().zip(model.shapes()).zip(model.values()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &dim in shape {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(self.origin, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode(bytes: &[u8], config: &ModelConfig, origin: &str) -> Result<Model<f32>> {
    if !bytes.starts_with(MAGIC) {
        return Err(Error::parse(origin, "missing NATLAB1 header"));
    }
    let mut r = Reader { bytes, pos: MAGIC.len(), origin };
    let mut tensors = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::parse(origin, "tensor name is not UTF-8"))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let data = r
            .take(count.checked_mul(4).ok_or_else(|| Error::parse(origin, "tensor too large"))?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, shape, data));
    }
    Model::from_tensors(config, tensors)
}

pub fn save(model: &Model<f32>, path: &Path) -> Result<()> {
    write_atomic(path, &encode(model))
}

pub fn load(path: &Path, config: &ModelConfig) -> Result<Model<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, config, &path.display().to_string())
}
