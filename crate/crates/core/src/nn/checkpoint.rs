//! Versioned little-endian checkpoint container with a SHA-256 trailer.
//!
//! Layout:
//!
//! ```text
//! magic   "EMOFCKPT"            8 bytes
//! version u32                   currently 1
//! kind    str                   u32 length + UTF-8
//! meta    str                   free-form JSON describing the model
//! epoch   u32
//! tensors u32 count, then per tensor: name str, rank u32, dims u64 × rank,
//!         values f64 × numel
//! optim   u8 (0 = none, 1 = sgd_momentum, 2 = adam); if present:
//!         step u64, slots u32, then per slot: first f64 vec, second f64 vec
//!         (each vec: u64 length + values)
//! sha256  32 bytes over everything above
//! ```

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::optim::{OptimizerKind, OptimizerState};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EMOFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: String,
    pub epoch: u32,
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, CHECKPOINT_VERSION);
        put_str(&mut buf, &self.kind);
        put_str(&mut buf, &self.meta);
        put_u32(&mut buf, self.epoch);
        put_u32(&mut buf, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_str(&mut buf, name);
            put_u32(&mut buf, t.rank() as u32);
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        match &self.optimizer {
            None => buf.push(0),
            Some(state) => {
                buf.push(match state.kind {
                    OptimizerKind::SgdMomentum => 1,
                    OptimizerKind::Adam => 2,
                });
                buf.extend_from_slice(&state.step.to_le_bytes());
                put_u32(&mut buf, state.first.len() as u32);
                for (a, b) in state.first.iter().zip(&state.second) {
                    put_vec(&mut buf, a);
                    put_vec(&mut buf, b);
                }
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = r.string()?;
        let meta = r.string()?;
        let epoch = r.u32()?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = r.f64s(numel)?;
            tensors.push((name, Tensor::new(shape, data)?));
        }
        let optimizer = match r.take(1)?[0] {
            0 => None,
            tag @ (1 | 2) => {
                let kind = if tag == 1 {
                    OptimizerKind::SgdMomentum
                } else {
                    OptimizerKind::Adam
                };
                let step = r.u64()?;
                let slots = r.u32()? as usize;
                let mut first = Vec::with_capacity(slots);
                let mut second = Vec::with_capacity(slots);
                for _ in 0..slots {
                    let len = r.u64()? as usize;
                    first.push(r.f64s(len)?);
                    let len = r.u64()? as usize;
                    second.push(r.f64s(len)?);
                }
                Some(OptimizerState {
                    kind,
                    step,
                    first,
                    second,
                })
            }
            other => return Err(Error::Checkpoint(format!("unknown optimizer tag {other}"))),
        };
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            kind,
            meta,
            epoch,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn put_vec(buf: &mut Vec<u8>, v: &[f64]) {
    buf.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid utf-8 string".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            kind: "speech".into(),
            meta: r#"{"preset":"resnet_lite_desk"}"#.into(),
            epoch: 3,
            tensors: vec![
                ("a".into(), Tensor::new(vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap()),
                ("b".into(), Tensor::scalar(0.1)),
            ],
            optimizer: Some(OptimizerState {
                kind: OptimizerKind::Adam,
                step: 7,
                first: vec![vec![0.1; 4], vec![0.2]],
                second: vec![vec![0.3; 4], vec![0.4]],
            }),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.tensors[0].1.data()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn detects_corruption() {
        let mut bytes = sample().to_bytes();
        bytes[20] ^= 1;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Checkpoint(m)) if m.contains("checksum")
        ));
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
    }
}
