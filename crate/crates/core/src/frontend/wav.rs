//! 16-bit PCM mono RIFF/WAVE input.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    /// Samples in `[−1, 1]`.
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::config("sample_rate", "must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples".into()));
        }
        Ok(AudioBuffer { samples, sample_rate })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Decodes a WAV file held in memory. Anything other than 16-bit integer
/// PCM with one channel is rejected.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| Error::format("WAV", e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format("WAV", format!("expected mono, found {} channels", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(
            "WAV",
            format!("expected 16-bit integer PCM, found {}-bit {:?}", spec.bits_per_sample, spec.sample_format),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format("WAV", e.to_string()))?;
    AudioBuffer::new(samples, spec.sample_rate)
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    parse_wav(&std::fs::read(path)?)
}

/// Encodes `audio` as 16-bit mono PCM, clipping to `[−1, 1]`.
pub fn encode_wav(audio: &AudioBuffer) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut out = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut out, spec).map_err(|e| Error::format("WAV", e.to_string()))?;
        for &s in &audio.samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            w.write_sample(v).map_err(|e| Error::format("WAV", e.to_string()))?;
        }
        w.finalize().map_err(|e| Error::format("WAV", e.to_string()))?;
    }
    Ok(out.into_inner())
}
