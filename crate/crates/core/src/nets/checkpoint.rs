//! Binary checkpoints: `PCSO`, a version, then named little-endian f32 tensors.

use std::path::Path;

use crate::autodiff::{ParameterStore, Tensor};
use crate::io::write_atomic;

use super::NetsError;

pub const MAGIC: &[u8; 4] = b"PCSO";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(store: &ParameterStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * store.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetsError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(NetsError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NetsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NetsError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParameterStore, NetsError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(NetsError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NetsError::VersionMismatch { found: version, expected: VERSION });
    }
    let count = r.u32()?;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| NetsError::Truncated(r.pos))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(NetsError::Truncated(r.pos))?;
        let raw = r.take(numel.checked_mul(4).ok_or(NetsError::Truncated(r.pos))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        store.insert(&name, Tensor::new(&shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(NetsError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParameterStore, path: &Path) -> Result<(), NetsError> {
    write_atomic(path, &encode_checkpoint(store))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterStore, NetsError> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Loads a checkpoint whose parameter names and shapes must equal `expected`'s.
pub fn load_checked(path: &Path, expected: &ParameterStore) -> Result<ParameterStore, NetsError> {
    let store = load_checkpoint(path)?;
    verify_against(&store, expected)?;
    Ok(store)
}

pub fn verify_against(store: &ParameterStore, expected: &ParameterStore) -> Result<(), NetsError> {
    for (name, t) in expected.iter() {
        let found = store.value(name).map_err(|_| NetsError::MissingParameter(name.to_string()))?;
        if found.shape() != t.shape() {
            return Err(NetsError::ParameterShape {
                name: name.to_string(),
                expected: t.shape().to_vec(),
                found: found.shape().to_vec(),
            });
        }
    }
    if let Some(extra) = store.names().find(|n| !expected.contains(n)) {
        return Err(NetsError::UnexpectedParameter(extra.to_string()));
    }
    Ok(())
}
