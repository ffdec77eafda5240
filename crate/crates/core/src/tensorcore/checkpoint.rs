//! `BOCK` checkpoint files.
//!
//! Layout (little-endian): magic `BOCK`, version `u32`, then for each
//! parameter in sorted name order: name length `u32`, UTF-8 name, rank
//! `u32`, extents `u32` each, `f64` payload. Entries run to end of file.

use std::fs;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BOCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(store: &ParamStore) -> Vec<u8> {
    let mut entries: Vec<(&str, &Tensor)> = store.iter().collect();
    entries.sort_by(|a, b| a.0.cmp(b.0));
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
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
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format {
            field,
            detail: format!("truncated at byte {}", self.pos),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            field: "magic",
            detail: "expected BOCK".into(),
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            field: "version",
            detail: format!("unsupported version {version}"),
        });
    }
    let mut entries = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|e| Error::Format {
                field: "name",
                detail: e.to_string(),
            })?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format {
                field: "extent",
                detail: format!("extents {shape:?} overflow"),
            })?;
        let payload = r.take(count, "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format {
            field: "extent",
            detail: e.to_string(),
        })?;
        entries.push((name, t));
    }
    Ok(entries)
}

pub fn write_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(store)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("zeta", Tensor::from_fn(vec![2, 3], |i| i as f64 * 0.5)).unwrap();
        s.add("alpha", Tensor::scalar(-1.25)).unwrap();
        s
    }

    #[test]
    fn round_trip_in_sorted_order() {
        let s = store();
        let bytes = encode_checkpoint(&s);
        let entries = decode_checkpoint(&bytes).unwrap();
        assert_eq!(entries[0].0, "alpha");
        assert_eq!(entries[1].0, "zeta");
        let mut fresh = store();
        for (_, t) in fresh.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        fresh.load(entries).unwrap();
        assert_eq!(fresh, s);
    }

    #[test]
    fn byte_size_follows_layout() {
        let bytes = encode_checkpoint(&store());
        // header + alpha(4+5+4+0+8) + zeta(4+4+4+8+48)
        assert_eq!(bytes.len(), 8 + 21 + 68);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = encode_checkpoint(&store());
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3]),
            Err(Error::Format { field: "payload", .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::Format { field: "magic", .. })
        ));
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let mut s = store();
        let bad = vec![
            ("alpha".to_string(), Tensor::scalar(0.0)),
            ("zeta".to_string(), Tensor::zeros(vec![3, 2])),
        ];
        assert!(s.load(bad).is_err());
    }
}
