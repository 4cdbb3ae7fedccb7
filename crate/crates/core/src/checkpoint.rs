//! Single-file binary checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "CXRNET01"
//! spec_len, NetworkSpec JSON (UTF-8)
//! per parameter, in network order:
//!     name_len, name (UTF-8), rank, extents[rank], values (f32 LE, row-major)
//! CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! The parameter count is implied by the network description.

use std::path::Path;

use crate::model::{ModelError, Network, NetworkSpec};
use crate::nn::Tensor;

pub const MAGIC: &[u8; 8] = b"CXRNET01";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("checkpoint corrupt or truncated: CRC mismatch")]
    Crc,
    #[error("checkpoint does not match its network spec: {0}")]
    SpecMismatch(String),
    #[error("parameter {name}: stored shape {stored:?}, network expects {expected:?}")]
    ShapeMismatch {
        name: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(
        &u32::try_from(v)
            .expect("checkpoint field exceeds u32")
            .to_le_bytes(),
    );
}

/// Serializes `net`. Equal networks give identical bytes.
pub fn to_bytes(net: &Network<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let spec = serde_json::to_vec(net.spec()).expect("network spec serializes");
    put_u32(&mut out, spec.len());
    out.extend_from_slice(&spec);
    for p in net.params() {
        put_u32(&mut out, p.name.len());
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.shape().len());
        for &d in p.value.shape() {
            put_u32(&mut out, d);
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                CheckpointError::SpecMismatch("record runs past the end of the payload".into())
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<&'a str, CheckpointError> {
        let n = self.u32()?;
        std::str::from_utf8(self.take(n)?).map_err(|e| CheckpointError::SpecMismatch(e.to_string()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network<f32>, CheckpointError> {
    let head = &bytes[..bytes.len().min(MAGIC.len())];
    if head != &MAGIC[..head.len()] {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 4 {
        return Err(CheckpointError::Crc);
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    if crc32fast::hash(payload) != stored {
        return Err(CheckpointError::Crc);
    }
    let mut r = Reader {
        buf: payload,
        pos: MAGIC.len(),
    };
    let spec: NetworkSpec = serde_json::from_str(r.string()?)
        .map_err(|e| CheckpointError::SpecMismatch(format!("spec JSON: {e}")))?;
    let mut net = Network::<f32>::new(spec, 0)?;
    for p in net.params_mut() {
        let name = r.string()?;
        if name != p.name {
            return Err(CheckpointError::SpecMismatch(format!(
                "expected parameter {}, found {name}",
                p.name
            )));
        }
        let rank = r.u32()?;
        let stored = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        if stored != p.value.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                stored,
                expected: p.value.shape().to_vec(),
            });
        }
        let raw = r.take(p.value.len() * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        p.value = Tensor::new(stored, values).expect("length checked above");
    }
    if r.pos != payload.len() {
        return Err(CheckpointError::SpecMismatch(format!(
            "{} trailing bytes after the last parameter",
            payload.len() - r.pos
        )));
    }
    Ok(net)
}

pub fn save(net: &Network<f32>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    std::fs::write(path, to_bytes(net))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Network<f32>, CheckpointError> {
    from_bytes(&std::fs::read(path)?)
}
