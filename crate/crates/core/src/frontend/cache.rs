//! Binary spectrogram cache.
//!
//! Little-endian layout: magic `EMOFSPEC`, version u32, record count u32,
//! then per record: id (u32 length + UTF-8), n_frames u32, n_mels u32,
//! frame_rate f64, normalized u8, and `n_frames · n_mels` f64 values in
//! row-major order.

use std::path::Path;

use super::LogMelSpectrogram;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EMOFSPEC";
const VERSION: u32 = 1;

pub fn encode(specs: &[LogMelSpectrogram]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(specs.len() as u32).to_le_bytes());
    for s in specs {
        buf.extend_from_slice(&(s.segment_id.len() as u32).to_le_bytes());
        buf.extend_from_slice(s.segment_id.as_bytes());
        buf.extend_from_slice(&(s.n_frames as u32).to_le_bytes());
        buf.extend_from_slice(&(s.n_mels as u32).to_le_bytes());
        buf.extend_from_slice(&s.frame_rate.to_le_bytes());
        buf.push(s.normalized as u8);
        for v in &s.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode(bytes: &[u8]) -> Result<Vec<LogMelSpectrogram>> {
    let bad = |m: &str| Error::input(format!("spectrogram cache: {m}"));
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_of = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let version = u32_of(take(4)?);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = u32_of(take(4)?) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = u32_of(take(4)?) as usize;
        let id = String::from_utf8(take(n)?.to_vec()).map_err(|_| bad("invalid id"))?;
        let n_frames = u32_of(take(4)?) as usize;
        let n_mels = u32_of(take(4)?) as usize;
        let frame_rate = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let normalized = take(1)?[0] != 0;
        let len = n_frames.checked_mul(n_mels).and_then(|v| v.checked_mul(8)).ok_or_else(|| bad("size overflow"))?;
        let data = take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut spec = LogMelSpectrogram::new(id, n_frames, n_mels, data)?;
        spec.frame_rate = frame_rate;
        spec.normalized = normalized;
        out.push(spec);
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

pub fn save(path: &Path, specs: &[LogMelSpectrogram]) -> Result<()> {
    Ok(std::fs::write(path, encode(specs))?)
}

pub fn load(path: &Path) -> Result<Vec<LogMelSpectrogram>> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut a = LogMelSpectrogram::new("seg-a", 2, 3, vec![1.0, -2.0, 3.5, 0.0, -0.0, 1e-300]).unwrap();
        a.normalized = true;
        let b = LogMelSpectrogram::new("b", 1, 1, vec![7.0]).unwrap();
        let bytes = encode(&[a.clone(), b.clone()]);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, vec![a, b]);
        assert_eq!(encode(&back), bytes);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
