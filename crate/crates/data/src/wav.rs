//! PCM waveform files.

use std::path::Path;

use avs_core::audio::{downmix, resample_linear};
use hound::{SampleFormat, WavSpec};

use crate::error::{DataError, Result};

fn audio_err(path: &Path, e: hound::Error) -> DataError {
    match e {
        hound::Error::IoError(io) => DataError::io(path, io),
        other => DataError::Audio { path: path.into(), msg: other.to_string() },
    }
}

/// Mono 16-bit PCM.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| audio_err(path, e))?;
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(q).map_err(|e| audio_err(path, e))?;
    }
    w.finalize().map_err(|e| audio_err(path, e))
}

/// Reads any integer or float PCM file as mono samples in `[-1, 1]`,
/// resampled to `target_rate`.
pub fn read_wav(path: &Path, target_rate: u32) -> Result<Vec<f32>> {
    let mut r = hound::WavReader::open(path).map_err(|e| audio_err(path, e))?;
    let spec = r.spec();
    let interleaved: Vec<f32> = match spec.sample_format {
        SampleFormat::Float => r.samples::<f32>().collect::<std::result::Result<_, _>>(),
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            r.samples::<i32>().map(|s| s.map(|v| v as f32 * scale)).collect()
        }
    }
    .map_err(|e| audio_err(path, e))?;
    let mono = downmix(&interleaved, usize::from(spec.channels));
    Ok(if spec.sample_rate == target_rate { mono } else { resample_linear(&mono, spec.sample_rate, target_rate) })
}
