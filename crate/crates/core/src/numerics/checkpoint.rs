//! Named-tensor container persisted as `fusion-stereo-ckpt-v1`.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "fusion-stereo-ckpt-v1\n"
//! u32 meta_len, meta bytes (UTF-8, free-form; the network config)
//! u32 entry_count
//! entry*: u32 name_len, name bytes, u32 rank, u64 extent * rank, f64 * numel
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: &str = "fusion-stereo-ckpt-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl CheckpointEntry {
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        Tensor::from_vec(&self.shape, self.values.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn new(meta: impl Into<String>) -> Self {
        Checkpoint {
            meta: meta.into(),
            entries: Vec::new(),
        }
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        let name = name.into();
        assert!(self.get(&name).is_none(), "duplicate checkpoint entry {name}");
        self.entries.push(CheckpointEntry {
            name,
            shape: t.shape().to_vec(),
            values: t.data().iter().map(|v| v.to_f64_lossy()).collect(),
        });
    }

    pub fn entries(&self) -> &[CheckpointEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("checkpoint has no entry `{name}`")))?
            .to_tensor()
    }

    /// Total scalar count over entries whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.values.len())
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_VERSION.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        let magic = r.take(CHECKPOINT_VERSION.len() + 1)?;
        if &magic[..CHECKPOINT_VERSION.len()] != CHECKPOINT_VERSION.as_bytes() || magic[CHECKPOINT_VERSION.len()] != b'\n' {
            return Err(Error::format(origin, format!("missing `{CHECKPOINT_VERSION}` header")));
        }
        let meta_len = r.u32()? as usize;
        let meta = r.string(meta_len)?;
        let n = r.u32()? as usize;
        let mut ck = Checkpoint::new(meta);
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = r.string(name_len)?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 8)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if ck.get(&name).is_some() {
                return Err(Error::format(origin, format!("duplicate entry `{name}`")));
            }
            ck.entries.push(CheckpointEntry { name, shape, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(origin, "trailing bytes after last entry"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.origin, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        let origin = self.origin;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(origin, "entry name is not UTF-8"))
    }
}
