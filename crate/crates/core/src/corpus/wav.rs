use std::path::Path;

use crate::dsp::{PcmSignal, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

const FULL_SCALE: f32 = 32768.0;

fn wav_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads a 16 kHz mono 16-bit PCM WAV file.
pub fn load_wav(path: impl AsRef<Path>) -> Result<PcmSignal> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_err(
            path,
            format!("expected mono, found {} channels", spec.channels),
        ));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(wav_err(
            path,
            format!(
                "expected sample rate {SAMPLE_RATE_HZ} Hz, found {} Hz",
                spec.sample_rate
            ),
        ));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(wav_err(
            path,
            format!(
                "expected 16-bit integer PCM, found {}-bit {:?}",
                spec.bits_per_sample, spec.sample_format
            ),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(path, e.to_string()))?;
    PcmSignal::new(samples)
}

/// Writes 16 kHz mono 16-bit PCM.
pub fn save_wav(signal: &PcmSignal, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE_HZ,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e.to_string()))?;
    for &s in signal.samples() {
        let q = (s * FULL_SCALE).round().clamp(-FULL_SCALE, FULL_SCALE - 1.0) as i16;
        w.write_sample(q).map_err(|e| wav_err(path, e.to_string()))?;
    }
    w.finalize().map_err(|e| wav_err(path, e.to_string()))
}
