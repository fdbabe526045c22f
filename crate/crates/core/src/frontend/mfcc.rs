use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::fft::magnitude_spectrum;
use super::wav::AudioBuffer;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfccConfig {
    pub sample_rate: u32,
    pub frame_ms: u32,
    pub hop_ms: u32,
    pub n_mel_filters: usize,
    pub n_ceps: usize,
    pub fmin: f64,
    /// Defaults to the Nyquist frequency.
    pub fmax: Option<f64>,
    /// Subtract each utterance's per-coefficient mean.
    pub mean_normalize: bool,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            sample_rate: 16000,
            frame_ms: 25,
            hop_ms: 10,
            n_mel_filters: 40,
            n_ceps: 40,
            fmin: 20.0,
            fmax: None,
            mean_normalize: false,
        }
    }
}

impl MfccConfig {
    pub fn frame_len(&self) -> usize {
        (self.sample_rate as u64 * self.frame_ms as u64 / 1000) as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.sample_rate as u64 * self.hop_ms as u64 / 1000) as usize
    }

    pub fn fft_size(&self) -> usize {
        self.frame_len().next_power_of_two()
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }

    pub fn fmax(&self) -> f64 {
        self.fmax.unwrap_or_else(|| self.nyquist())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate", "must be positive"));
        }
        if self.frame_ms <= self.hop_ms {
            return Err(Error::config("frame_ms", "must exceed hop_ms"));
        }
        if self.hop_len() == 0 || self.frame_len() < 2 {
            return Err(Error::config("hop_ms", "frame or hop shorter than one sample"));
        }
        if self.n_mel_filters == 0 || self.n_ceps == 0 || self.n_ceps > self.n_mel_filters {
            return Err(Error::config("n_ceps", "need 0 < n_ceps <= n_mel_filters"));
        }
        if self.fmax() > self.nyquist() {
            return Err(Error::config(
                "fmax",
                format!("{} Hz exceeds Nyquist {} Hz", self.fmax(), self.nyquist()),
            ));
        }
        if !(self.fmin >= 0.0) || self.fmin >= self.fmax() {
            return Err(Error::config("fmin", "need 0 <= fmin < fmax"));
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Splits audio into overlapping frames; a trailing partial frame is dropped.
pub fn frame_signal(audio: &AudioBuffer, cfg: &MfccConfig) -> Result<Vec<Vec<f64>>> {
    let (frame, hop) = (cfg.frame_len(), cfg.hop_len());
    if audio.samples.len() < frame {
        return Err(Error::TooShort {
            required: frame,
            got: audio.samples.len(),
        });
    }
    let count = 1 + (audio.samples.len() - frame) / hop;
    Ok((0..count)
        .map(|i| audio.samples[i * hop..i * hop + frame].to_vec())
        .collect())
}

/// `w[k] = 0.54 − 0.46 cos(2πk / (n − 1))`.
pub fn hamming_window(n: usize) -> Vec<f64> {
    assert!(n >= 2, "hamming window needs at least 2 points");
    let denom = (n - 1) as f64;
    (0..n)
        .map(|k| 0.54 - 0.46 * (2.0 * PI * k as f64 / denom).cos())
        .collect()
}

/// Triangular filters spaced evenly on the mel scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `n_filters × (fft_size/2 + 1)`.
    pub weights: Matrix,
    /// Edge frequencies in Hz: `n_filters + 2` points, filter `j` spans
    /// `edges[j]..edges[j + 2]` and peaks at `edges[j + 1]`.
    pub edges: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_filters: usize, fft_size: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Self {
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..n_filters + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_filters + 1) as f64))
            .collect();
        let n_bins = fft_size / 2 + 1;
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let mut weights = Matrix::zeros(n_filters, n_bins);
        for j in 0..n_filters {
            let (left, centre, right) = (edges[j], edges[j + 1], edges[j + 2]);
            for b in 0..n_bins {
                let f = b as f64 * bin_hz;
                let w = if f > left && f <= centre {
                    (f - left) / (centre - left)
                } else if f > centre && f < right {
                    (right - f) / (right - centre)
                } else {
                    0.0
                };
                weights.set(j, b, w);
            }
        }
        MelFilterbank { weights, edges }
    }

    pub fn from_config(cfg: &MfccConfig) -> Self {
        MelFilterbank::new(cfg.n_mel_filters, cfg.fft_size(), cfg.sample_rate, cfg.fmin, cfg.fmax())
    }

    pub fn centre_hz(&self, j: usize) -> f64 {
        self.edges[j + 1]
    }

    pub fn apply(&self, spectrum: &[f64]) -> Vec<f64> {
        (0..self.weights.rows())
            .map(|j| self.weights.row(j).iter().zip(spectrum).map(|(w, s)| w * s).sum())
            .collect()
    }
}

/// Orthonormal DCT-II operator, `n_out × n_in`.
pub fn dct_matrix(n_out: usize, n_in: usize) -> Matrix {
    let mut d = Matrix::zeros(n_out, n_in);
    let n = n_in as f64;
    for k in 0..n_out {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for i in 0..n_in {
            d.set(k, i, scale * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos());
        }
    }
    d
}

fn check_rate(audio: &AudioBuffer, cfg: &MfccConfig) -> Result<()> {
    if audio.sample_rate != cfg.sample_rate {
        return Err(Error::config(
            "sample_rate",
            format!("audio is {} Hz, config expects {} Hz", audio.sample_rate, cfg.sample_rate),
        ));
    }
    Ok(())
}

/// Floored log mel energies per frame, before the DCT: `T × n_mel_filters`.
pub fn log_mel_energies(audio: &AudioBuffer, cfg: &MfccConfig) -> Result<Matrix> {
    cfg.validate()?;
    check_rate(audio, cfg)?;
    let frames = frame_signal(audio, cfg)?;
    let window = hamming_window(cfg.frame_len());
    let bank = MelFilterbank::from_config(cfg);
    let n_fft = cfg.fft_size();
    let mut out = Matrix::zeros(frames.len(), cfg.n_mel_filters);
    for (t, frame) in frames.iter().enumerate() {
        let windowed: Vec<f64> = frame.iter().zip(&window).map(|(x, w)| x * w).collect();
        let mags = magnitude_spectrum(&windowed, n_fft);
        for (o, e) in out.row_mut(t).iter_mut().zip(bank.apply(&mags)) {
            *o = e.max(LOG_FLOOR).ln();
        }
    }
    Ok(out)
}

/// Mel cepstral coefficients, `T × n_ceps`.
pub fn mfcc(audio: &AudioBuffer, cfg: &MfccConfig) -> Result<Matrix> {
    let energies = log_mel_energies(audio, cfg)?;
    let dct = dct_matrix(cfg.n_ceps, cfg.n_mel_filters).transpose();
    let mut ceps = energies.matmul(&dct)?;
    if cfg.mean_normalize && ceps.rows() > 0 {
        let mut mean = ceps.col_sums();
        mean.scale(1.0 / ceps.rows() as f64);
        for t in 0..ceps.rows() {
            for (c, m) in ceps.row_mut(t).iter_mut().zip(mean.data()) {
                *c -= m;
            }
        }
    }
    Ok(ceps)
}
