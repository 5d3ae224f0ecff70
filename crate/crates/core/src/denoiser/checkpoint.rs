//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PDCK" | version u32
//! schedule: T u32 | kind u8 (0 uniform, 1 marginal) | [k u32, k×f64] ×2 if marginal
//! step u64 | seed u64
//! meta: len u32 | TOML bytes (architecture and size histogram)
//! tensors: count u32 | per tensor: name len u32, name, dtype u8 (0 = f64),
//!          ndim u32, ndim×u64 dims, raw f64 data
//! CRC-64/XZ of everything above, u64
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::diffusion::TransitionKind;
use crate::tfe::TfeConfig;

use super::model::DenoiserConfig;
use super::DenoiserError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PDCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const CRC: crc::Crc<u64> = crc::Crc::<u64>::new(&crc::CRC_64_XZ);
const DTYPE_F64: u8 = 0;

/// Everything needed to rebuild the models besides the raw tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// Absent in a checkpoint holding only a trained TFE.
    pub denoiser: Option<DenoiserConfig>,
    pub tfe: Option<TfeConfig>,
    /// `[atom count, molecules]` pairs from the training set.
    pub size_histogram: Vec<[u64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub steps: usize,
    pub kind: TransitionKind,
    pub step: u64,
    pub seed: u64,
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor)>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    put_u32(out, v.len() as u32);
    v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, DenoiserError> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u32(&mut out, self.steps as u32);
        match &self.kind {
            TransitionKind::Uniform => out.push(0),
            TransitionKind::Marginal { nodes, edges } => {
                out.push(1);
                put_f64s(&mut out, nodes);
                put_f64s(&mut out, edges);
            }
        }
        put_u64(&mut out, self.step);
        put_u64(&mut out, self.seed);
        let meta = toml::to_string(&self.meta).map_err(|e| DenoiserError::CorruptFile(e.to_string()))?;
        put_u32(&mut out, meta.len() as u32);
        out.extend_from_slice(meta.as_bytes());
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            put_u32(&mut out, t.ndim() as u32);
            t.shape().iter().for_each(|&d| put_u64(&mut out, d as u64));
            t.data().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        }
        let crc = CRC.checksum(&out);
        put_u64(&mut out, crc);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, DenoiserError> {
        let corrupt = |m: &str| DenoiserError::CorruptFile(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("missing PDCK header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(DenoiserError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if CRC.checksum(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let steps = r.u32()? as usize;
        let kind = match r.u8()? {
            0 => TransitionKind::Uniform,
            1 => TransitionKind::Marginal {
                nodes: r.f64s()?,
                edges: r.f64s()?,
            },
            k => return Err(DenoiserError::CorruptFile(format!("unknown schedule kind {k}"))),
        };
        let step = r.u64()?;
        let seed = r.u64()?;
        let len = r.u32()? as usize;
        let meta = std::str::from_utf8(r.take(len)?).map_err(|_| corrupt("meta is not UTF-8"))?;
        let meta: CheckpointMeta = toml::from_str(meta).map_err(|e| DenoiserError::CorruptFile(e.to_string()))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| corrupt("tensor name"))?;
            if r.u8()? != DTYPE_F64 {
                return Err(corrupt("unsupported dtype"));
            }
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| corrupt("tensor size"))?;
            let data = r
                .take(numel * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data).map_err(|_| corrupt("tensor shape"))?));
        }
        if r.remaining() != 0 {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Checkpoint {
            steps,
            kind,
            step,
            seed,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DenoiserError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, DenoiserError> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DenoiserError> {
        if n > self.remaining() {
            return Err(DenoiserError::CorruptFile("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DenoiserError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DenoiserError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DenoiserError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self) -> Result<Vec<f64>, DenoiserError> {
        let n = self.u32()? as usize;
        Ok(self
            .take(n.checked_mul(8).ok_or(DenoiserError::CorruptFile("length".into()))?)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::model::DenoiserModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let cfg = DenoiserConfig {
            d_model: 8,
            blocks: 1,
            heads: 2,
            d_edge: 4,
            ff_hidden: 8,
            d_z: 3,
        };
        let m = DenoiserModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(0));
        Checkpoint {
            steps: 50,
            kind: TransitionKind::Marginal {
                nodes: vec![0.5, 0.5],
                edges: vec![1.0],
            },
            step: 123,
            seed: 42,
            meta: CheckpointMeta {
                denoiser: Some(cfg),
                tfe: Some(TfeConfig::default()),
                size_histogram: vec![[3, 10], [5, 2]],
            },
            tensors: m.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pdck");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            let e = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(e, DenoiserError::CorruptFile(_)), "cut {cut}: {e:?}");
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(DenoiserError::CorruptFile(_))));
    }

    #[test]
    fn version_bump_is_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(DenoiserError::VersionMismatch { found: 2, expected: 1 })
        ));
    }
}
