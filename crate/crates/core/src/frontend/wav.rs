//! Mono WAV input/output.

use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::error::{Error, Result};

fn wav_err(path: &Path, msg: impl ToString) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

/// Reads a mono 16-bit PCM or 32-bit float WAV file; returns samples in
/// [-1, 1] and the sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_err(path, format!("expected mono, found {} channels", spec.channels)));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>(),
        (SampleFormat::Float, 32) => reader.samples::<f32>().collect(),
        (fmt, bits) => {
            return Err(wav_err(path, format!("unsupported sample format {fmt:?} {bits}-bit")));
        }
    }
    .map_err(|e| wav_err(path, e))?;
    Ok((samples, spec.sample_rate))
}

/// Writes mono 32-bit float samples, so a read back is lossless.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in samples {
        writer.write_sample(s).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}
