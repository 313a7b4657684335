//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "RCPCKPT\0"
//! version      u32
//! config       32 bytes SHA-256 of the resolved run configuration
//! epoch        u64
//! model        5 × u64  channels[0..3], embed_dim, classes
//! input_size   u64
//! metadata     u64 length + UTF-8 bytes (free-form, usually JSON)
//! tensors      u32 count, then per tensor:
//!              u32 name length + UTF-8 name, u8 dtype (0 = f32, 1 = f64),
//!              u32 rank, rank × u64 dims, raw little-endian data
//! ```
//!
//! Optimizer velocity buffers are stored as tensors named `velocity/<param>`.

use std::fs;
use std::path::Path;

use super::{ModelConfig, TinyBackbone};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RCPCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const VELOCITY_PREFIX: &str = "velocity/";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CheckpointMeta {
    pub epoch: u64,
    pub config_digest: [u8; 32],
    pub metadata: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub model: TinyBackbone<T>,
    /// Momentum buffers in parameter order, if saved.
    pub velocity: Option<Vec<Tensor<T>>>,
    pub meta: CheckpointMeta,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    out.push(T::DTYPE);
    put_u32(out, t.shape.len() as u32);
    t.shape.iter().for_each(|&d| put_u64(out, d as u64));
    t.data.iter().for_each(|v| v.write_le(out));
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint<T: Scalar>(model: &TinyBackbone<T>, velocity: Option<&[Tensor<T>]>, meta: &CheckpointMeta) -> Vec<u8> {
    let c = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    out.extend_from_slice(&meta.config_digest);
    put_u64(&mut out, meta.epoch);
    for v in [c.channels[0], c.channels[1], c.channels[2], c.embed_dim, c.classes, c.input_size] {
        put_u64(&mut out, v as u64);
    }
    put_u64(&mut out, meta.metadata.len() as u64);
    out.extend_from_slice(meta.metadata.as_bytes());
    let vel = velocity.unwrap_or(&[]);
    put_u32(&mut out, (model.params().len() + vel.len()) as u32);
    for t in model.params() {
        put_tensor(&mut out, &t.name, t);
    }
    for t in vel {
        put_tensor(&mut out, &format!("{VELOCITY_PREFIX}{}", t.name), t);
    }
    out
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    model: &TinyBackbone<T>,
    velocity: Option<&[Tensor<T>]>,
    meta: &CheckpointMeta,
) -> Result<()> {
    fs::write(path, encode_checkpoint(model, velocity, meta))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format("checkpoint", format!("truncated: need {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::format("checkpoint", format!("value {v} too large")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::format("checkpoint", format!("invalid UTF-8: {e}")))
    }
}

/// Parses a checkpoint. The stored dtype must match `T`.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format("checkpoint", "bad magic bytes"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let config_digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let epoch = r.u64()?;
    let config = ModelConfig {
        channels: [r.usize()?, r.usize()?, r.usize()?],
        embed_dim: r.usize()?,
        classes: r.usize()?,
        input_size: r.usize()?,
    };
    let meta_len = r.usize()?;
    let metadata = r.string(meta_len)?;
    let count = r.u32()? as usize;
    let mut params = Vec::new();
    let mut velocity = Vec::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len)?;
        let dtype = r.u8()?;
        if dtype != T::DTYPE {
            return Err(Error::format("checkpoint", format!("tensor {name} has dtype {dtype}, expected {}", T::DTYPE)));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format("checkpoint", format!("tensor {name} shape overflows")))?;
        let width = std::mem::size_of::<T>();
        let raw = r.take(len.checked_mul(width).ok_or_else(|| Error::format("checkpoint", "tensor too large"))?)?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        match name.strip_prefix(VELOCITY_PREFIX) {
            Some(p) => velocity.push(Tensor { name: p.to_string(), shape, data }),
            None => params.push(Tensor { name, shape, data }),
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format("checkpoint", format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let model = TinyBackbone::from_tensors(config, params).map_err(|e| Error::format("checkpoint", e.to_string()))?;
    let velocity = if velocity.is_empty() {
        None
    } else {
        let matches = velocity.len() == model.params().len()
            && velocity.iter().zip(model.params()).all(|(v, p)| v.name == p.name && v.shape == p.shape);
        if !matches {
            return Err(Error::format("checkpoint", "optimizer state does not match the parameters"));
        }
        Some(velocity)
    };
    Ok(Checkpoint { model, velocity, meta: CheckpointMeta { epoch, config_digest, metadata } })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageF32;
    use crate::optim::SgdState;
    use crate::rng::RngStream;

    fn model() -> TinyBackbone<f32> {
        let cfg = ModelConfig { channels: [4, 6, 8], embed_dim: 8, classes: 5, input_size: 16 };
        TinyBackbone::init(cfg, 11).unwrap()
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta { epoch: 3, config_digest: [7; 32], metadata: "{\"lr\":0.1}".into() }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let mut m = model();
        m.attach_arcface_head(2);
        let mut opt = SgdState::new(m.params(), 0.9, 1e-4);
        opt.velocity[0].data[0] = 0.125;
        let bytes = encode_checkpoint(&m, Some(&opt.velocity), &meta());
        let ck: Checkpoint<f32> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.model.params(), m.params());
        assert_eq!(ck.velocity.as_deref(), Some(&opt.velocity[..]));
        assert_eq!(ck.meta, meta());
        assert_eq!(ck.model.digest(), m.digest());

        let mut rng = RngStream::new(0, 0);
        let probe = ImageF32::from_pixels(16, 16, (0..768).map(|_| rng.uniform() as f32).collect()).unwrap();
        let a = m.forward(std::slice::from_ref(&probe)).unwrap();
        let b = ck.model.forward(&[probe]).unwrap();
        assert_eq!(a, b);
        assert_eq!(encode_checkpoint(&ck.model, ck.velocity.as_deref(), &ck.meta), bytes);
    }

    #[test]
    fn truncation_is_an_error() {
        let bytes = encode_checkpoint(&model(), None, &meta());
        for cut in [0, 5, 12, 60, bytes.len() / 2, bytes.len() - 1] {
            let r = decode_checkpoint::<f32>(&bytes[..cut]);
            assert!(matches!(r, Err(Error::Format { .. })), "cut at {cut}");
        }
    }

    #[test]
    fn version_and_dtype_are_checked() {
        let mut bytes = encode_checkpoint(&model(), None, &meta());
        assert!(decode_checkpoint::<f64>(&bytes).is_err());
        bytes[8] = 9;
        let err = decode_checkpoint::<f32>(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
        bytes[0] = b'X';
        assert!(decode_checkpoint::<f32>(&bytes).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model();
        save_checkpoint(&path, &m, None, &meta()).unwrap();
        let ck = load_checkpoint::<f32>(&path).unwrap();
        assert!(ck.velocity.is_none());
        assert_eq!(ck.model.params(), m.params());
    }
}
