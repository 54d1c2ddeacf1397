//! Named-tensor checkpoint file.
//!
//! Layout, little-endian: magic `SSF1`, version `u32`, entry count `u32`,
//! then per entry `name_len u32`, UTF-8 name, `rank u32`, `rank` dims as
//! `u32`, and `prod(dims)` `f32` values.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SSF1";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(entries: &[(String, Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(entries.len()).map_err(|_| Error::format(8, "too many entries"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in entries {
        if !seen.insert(name.as_str()) {
            return Err(Error::format(out.len(), format!("duplicate entry {name:?}")));
        }
        let at = out.len();
        let too_big = || Error::format(at, format!("entry {name:?} exceeds u32 limits"));
        out.extend_from_slice(&u32::try_from(name.len()).map_err(|_| too_big())?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&u32::try_from(d).map_err(|_| too_big())?.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.bytes.len(), format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Validates every length against the remaining bytes before allocating.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected SSF1"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = r.u32("entry count")? as usize;
    // Smallest possible entry is 8 bytes (empty name, rank 0 still holds one value).
    if count > r.remaining() / 8 {
        return Err(Error::format(8, format!("entry count {count} exceeds file size")));
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(count);
    for index in 0..count {
        let entry_start = r.pos;
        let name_len = r.u32(&format!("name length of entry {index}"))? as usize;
        let raw = r.take(name_len, &format!("name of entry {index}"))?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| Error::format(entry_start + 4, format!("entry {index} name is not UTF-8")))?
            .to_string();
        let rank = r.u32(&format!("rank of entry {name:?}"))? as usize;
        if rank > r.remaining() / 4 {
            return Err(Error::format(bytes.len(), format!("truncated dims of entry {name:?}")));
        }
        let dims: Vec<usize> = (0..rank)
            .map(|_| r.u32(&format!("dims of entry {name:?}")).map(|d| d as usize))
            .collect::<Result<_>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| Error::format(bytes.len(), format!("truncated payload of entry {name:?}")))?;
        let payload = r.take(numel * 4, &format!("payload of entry {name:?}"))?;
        let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        if !seen.insert(name.clone()) {
            return Err(Error::format(entry_start, format!("duplicate entry {name:?}")));
        }
        let t = Tensor::from_vec(&dims, data).map_err(|e| Error::format(entry_start, format!("entry {name:?}: {e}")))?;
        entries.push((name, t));
    }
    if r.remaining() != 0 {
        return Err(Error::format(r.pos, "trailing bytes after last entry"));
    }
    Ok(entries)
}

pub fn save_checkpoint(entries: &[(String, Tensor<f32>)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(entries)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<f32>)>> {
    let path = path.as_ref();
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
