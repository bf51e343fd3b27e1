use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Framing and filterbank settings for [`log_mel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    /// Hanning window length in samples (25 ms at 16 kHz).
    pub win_length: usize,
    /// Hop between frames in samples (10 ms at 16 kHz).
    pub hop_length: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Added to filterbank energies before the log.
    pub floor: f64,
    /// Mel scale variant; only `"htk"` is implemented.
    pub scale: String,
}

impl MelConfig {
    pub fn with_mels(n_mels: usize) -> Self {
        MelConfig {
            sample_rate: 16_000,
            win_length: 400,
            hop_length: 160,
            n_fft: 512,
            n_mels,
            f_min: 0.0,
            f_max: 8_000.0,
            floor: 1e-10,
            scale: "htk".into(),
        }
    }

    /// Number of frames a waveform of `n` samples produces.
    pub fn frame_count(&self, n: usize) -> usize {
        if n < self.win_length {
            0
        } else {
            (n - self.win_length) / self.hop_length + 1
        }
    }

    /// Samples needed for exactly `frames` frames.
    pub fn samples_for(&self, frames: usize) -> usize {
        self.win_length + (frames - 1) * self.hop_length
    }
}

impl Default for MelConfig {
    fn default() -> Self {
        Self::with_mels(128)
    }
}

/// Log-mel spectrogram: `frames` is `[T_frames × n_mels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioFeature {
    pub frames: Tensor,
    pub config: MelConfig,
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Centre frequency of each triangular band.
pub fn band_centers_hz(cfg: &MelConfig) -> Vec<f64> {
    let points = mel_points(cfg);
    points[1..=cfg.n_mels].iter().map(|&m| mel_to_hz(m)).collect()
}

fn mel_points(cfg: &MelConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    (0..cfg.n_mels + 2).map(|i| lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64).collect()
}

/// Triangular filters with unit peak, `[n_mels × (n_fft/2 + 1)]`.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.n_fft / 2 + 1;
    let hz: Vec<f64> = mel_points(cfg).into_iter().map(mel_to_hz).collect();
    (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (hz[m], hz[m + 1], hz[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
                    if f <= left || f >= right {
                        0.0
                    } else if f <= center {
                        (f - left) / (center - left)
                    } else {
                        (right - f) / (right - center)
                    }
                })
                .collect()
        })
        .collect()
}

/// Symmetric Hanning window.
pub fn hanning(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect()
}

pub fn log_mel(waveform: &[f32], cfg: &MelConfig) -> Result<AudioFeature> {
    if waveform.is_empty() {
        return Err(Error::input("empty waveform"));
    }
    if cfg.scale != "htk" {
        return Err(Error::Config(format!("unsupported mel scale {:?}", cfg.scale)));
    }
    if cfg.win_length > cfg.n_fft || cfg.hop_length == 0 || cfg.n_mels == 0 {
        return Err(Error::Config(format!(
            "window {} / hop {} / n_fft {} / n_mels {}",
            cfg.win_length, cfg.hop_length, cfg.n_fft, cfg.n_mels
        )));
    }
    let n_frames = cfg.frame_count(waveform.len());
    if n_frames == 0 {
        return Err(Error::input(format!(
            "{} samples is shorter than one {}-sample window",
            waveform.len(),
            cfg.win_length
        )));
    }
    let window = hanning(cfg.win_length);
    let bank = mel_filterbank(cfg);
    let n_bins = cfg.n_fft / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut power = vec![0.0; n_bins];
    let mut out = Vec::with_capacity(n_frames * cfg.n_mels);
    for t in 0..n_frames {
        let start = t * cfg.hop_length;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, w) in window.iter().enumerate() {
            buf[i].re = waveform[start + i] as f64 * w;
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for filter in &bank {
            let e: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
            let v = (e + cfg.floor).ln();
            out.push(if v.is_finite() { v } else { f64::MAX.ln() });
        }
    }
    Ok(AudioFeature { frames: Tensor::new(vec![n_frames, cfg.n_mels], out)?, config: cfg.clone() })
}

impl AudioFeature {
    /// Truncates or pads (with `ln(floor)`) to exactly `target` frames.
    pub fn fit_frames(mut self, target: usize) -> Result<Self> {
        let (t, f) = (self.frames.rows(), self.frames.cols());
        if t == target {
            return Ok(self);
        }
        let mut data = self.frames.into_data();
        data.resize(target * f, self.config.floor.ln());
        self.frames = Tensor::new(vec![target, f], data)?;
        Ok(self)
    }

    /// Zero-mean, unit-variance copy (constant inputs map to zeros).
    pub fn standardized(&self) -> AudioFeature {
        let d = self.frames.data();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let std = (d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let inv = if std > 1e-12 { 1.0 / std } else { 0.0 };
        let frames = Tensor::from_fn(self.frames.shape(), |i| (d[i] - mean) * inv);
        AudioFeature { frames, config: self.config.clone() }
    }
}
