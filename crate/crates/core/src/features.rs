//! Log mel spectrum extraction.
//!
//! Frames are Hann-windowed after reflect-padding the signal by half a window
//! on each side, so frame `t` is centered on sample `t * hop`. Mel filters are
//! triangular on the HTK mel scale and normalized to unit area.

use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window_ms: u32,
    pub hop_ms: u32,
    pub n_mels: usize,
    /// Defaults to the next power of two at or above the window length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fft_size: Option<usize>,
    #[serde(default)]
    pub mel_fmin: f64,
    /// Defaults to the Nyquist frequency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mel_fmax: Option<f64>,
    #[serde(default = "default_log_floor")]
    pub log_floor: f64,
}

fn default_log_floor() -> f64 {
    1e-10
}

impl FeatureConfig {
    /// 16 kHz, 80 ms windows, 50 Hz frame rate, 160 mel bands.
    pub fn full() -> Self {
        Self {
            sample_rate: 16000,
            window_ms: 80,
            hop_ms: 20,
            n_mels: 160,
            fft_size: None,
            mel_fmin: 0.0,
            mel_fmax: None,
            log_floor: default_log_floor(),
        }
    }

    pub fn toy() -> Self {
        Self {
            sample_rate: 8000,
            n_mels: 32,
            ..Self::full()
        }
    }

    pub fn window_len(&self) -> usize {
        (self.sample_rate as u64 * self.window_ms as u64 / 1000) as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.sample_rate as u64 * self.hop_ms as u64 / 1000) as usize
    }

    pub fn fft_len(&self) -> usize {
        self.fft_size
            .unwrap_or_else(|| self.window_len().next_power_of_two())
    }

    pub fn fmax(&self) -> f64 {
        self.mel_fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    /// Frames per second.
    pub fn frame_rate(&self) -> f64 {
        1000.0 / self.hop_ms as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sample_rate == 0 || self.hop_ms == 0 || self.window_ms == 0 {
            return bad("sample_rate, window_ms and hop_ms must be positive".into());
        }
        if (self.sample_rate as u64 * self.window_ms as u64) % 1000 != 0
            || (self.sample_rate as u64 * self.hop_ms as u64) % 1000 != 0
        {
            return bad("window and hop must be a whole number of samples".into());
        }
        if self.window_ms < self.hop_ms {
            return bad("window_ms must be >= hop_ms".into());
        }
        let fft = self.fft_len();
        if !fft.is_power_of_two() || fft < self.window_len() {
            return bad(format!("fft_size {fft} must be a power of two >= window length"));
        }
        if self.n_mels == 0 || self.n_mels >= fft / 2 {
            return bad(format!("n_mels {} must be in 1..fft_size/2", self.n_mels));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        if !(self.mel_fmin >= 0.0 && self.fmax() > self.mel_fmin) {
            return bad("mel frequency range is empty".into());
        }
        Ok(())
    }
}

/// One log mel spectrum (natural log of mel energies).
#[derive(Debug, Clone, PartialEq)]
pub struct MelFrame {
    pub values: Vec<f64>,
    pub frame_index: usize,
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Number of frames produced for a signal of `len` samples.
pub fn frame_count(len: usize, cfg: &FeatureConfig) -> usize {
    let win = cfg.window_len();
    if len < win {
        return 0;
    }
    let padded = len + 2 * (win / 2);
    (padded - win) / cfg.hop_len() + 1
}

/// Reflect-pads `x` by `pad` samples on each side (edge sample not repeated).
pub fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    assert!(x.len() > pad, "signal too short to reflect-pad");
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    out
}

/// Splits a signal into the analysis windows used for feature frames.
/// Frame `t` is centered on sample `t * hop`.
pub fn frame_windows(x: &[f64], cfg: &FeatureConfig) -> Vec<Vec<f64>> {
    let n = frame_count(x.len(), cfg);
    if n == 0 {
        return Vec::new();
    }
    let win = cfg.window_len();
    let hop = cfg.hop_len();
    let padded = reflect_pad(x, win / 2);
    (0..n)
        .map(|t| padded[t * hop..t * hop + win].to_vec())
        .collect()
}

/// Triangular filter stored as a contiguous run of FFT-bin weights.
#[derive(Debug, Clone)]
struct MelFilter {
    start: usize,
    weights: Vec<f64>,
}

/// Precomputed window, FFT plan and mel filterbank for one [`FeatureConfig`].
#[derive(Clone)]
pub struct MelAnalyzer {
    cfg: FeatureConfig,
    window: Vec<f64>,
    filters: Vec<MelFilter>,
    centers_hz: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelAnalyzer").field("cfg", &self.cfg).finish()
    }
}

impl MelAnalyzer {
    pub fn new(cfg: &FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let win = cfg.window_len();
        let n_fft = cfg.fft_len();
        // periodic Hann
        let window = (0..win)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win as f64).cos())
            .collect();

        let n_bins = n_fft / 2 + 1;
        let bin_hz = cfg.sample_rate as f64 / n_fft as f64;
        let (mlo, mhi) = (hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.fmax()));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let mut filters = Vec::with_capacity(cfg.n_mels);
        for m in 0..cfg.n_mels {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut start = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= c {
                    (f - lo) / (c - lo)
                } else if f > c && f < hi {
                    (hi - f) / (hi - c)
                } else {
                    0.0
                };
                if w > 0.0 {
                    start.get_or_insert(k);
                    weights.push(w);
                } else if start.is_some() {
                    break;
                }
            }
            let filter = match start {
                Some(start) => {
                    let area: f64 = weights.iter().sum();
                    weights.iter_mut().for_each(|w| *w /= area);
                    MelFilter { start, weights }
                }
                // narrower than one bin: fall back to the nearest bin
                None => MelFilter {
                    start: ((c / bin_hz).round() as usize).min(n_bins - 1),
                    weights: vec![1.0],
                },
            };
            filters.push(filter);
        }
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Self {
            cfg: cfg.clone(),
            window,
            filters,
            centers_hz: edges[1..=cfg.n_mels].to_vec(),
            fft,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// Center frequency of each mel filter in Hz.
    pub fn center_frequencies(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Mel energies (before the log) of one analysis window.
    pub fn mel_energies(&self, frame: &[f64]) -> Vec<f64> {
        let n_fft = self.cfg.fft_len();
        let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); n_fft];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
            b.re = x * w;
        }
        self.fft.process(&mut buf);
        self.filters
            .iter()
            .map(|f| {
                f.weights
                    .iter()
                    .zip(&buf[f.start..])
                    .map(|(w, c)| w * c.norm_sqr())
                    .sum()
            })
            .collect()
    }

    pub fn log_mel(&self, frame: &[f64]) -> Vec<f64> {
        let floor = self.cfg.log_floor;
        self.mel_energies(frame)
            .into_iter()
            .map(|e| if e.is_finite() { e.max(floor).ln() } else { floor.ln() })
            .collect()
    }

    pub fn process(&self, audio: &AudioBuffer) -> Result<Vec<MelFrame>> {
        if audio.sample_rate != self.cfg.sample_rate {
            return Err(Error::Config(format!(
                "audio rate {} Hz does not match feature rate {} Hz",
                audio.sample_rate, self.cfg.sample_rate
            )));
        }
        Ok(frame_windows(&audio.samples, &self.cfg)
            .iter()
            .enumerate()
            .map(|(t, w)| MelFrame {
                values: self.log_mel(w),
                frame_index: t,
            })
            .collect())
    }
}

/// Convenience wrapper: builds a [`MelAnalyzer`] and processes `audio`.
pub fn log_mel_features(audio: &AudioBuffer, cfg: &FeatureConfig) -> Result<Vec<MelFrame>> {
    MelAnalyzer::new(cfg)?.process(audio)
}
