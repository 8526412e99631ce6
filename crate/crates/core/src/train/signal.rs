use rand::Rng;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Pitch range searched by [`voicing_score`].
pub const PITCH_MIN_HZ: f64 = 50.0;
pub const PITCH_MAX_HZ: f64 = 400.0;
/// Frames quieter than this RMS score zero.
pub const SILENCE_RMS: f64 = 1e-4;

/// Maximum normalized autocorrelation over lags for 50-400 Hz, clamped to
/// `[0, 1]`. Lags longer than half the frame are skipped.
pub fn voicing_score(frame: &[f64], sample_rate: u32) -> f64 {
    if frame.is_empty() {
        return 0.0;
    }
    let rms = (frame.iter().map(|v| v * v).sum::<f64>() / frame.len() as f64).sqrt();
    if rms < SILENCE_RMS {
        return 0.0;
    }
    let sr = sample_rate as f64;
    let lag_min = ((sr / PITCH_MAX_HZ).floor() as usize).max(1);
    let lag_max = ((sr / PITCH_MIN_HZ).ceil() as usize).min(frame.len() / 2);
    let mut best: f64 = 0.0;
    for lag in lag_min..=lag_max {
        let (a, b) = (&frame[..frame.len() - lag], &frame[lag..]);
        let num: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let ea: f64 = a.iter().map(|x| x * x).sum();
        let eb: f64 = b.iter().map(|x| x * x).sum();
        if ea > 0.0 && eb > 0.0 {
            best = best.max(num / (ea * eb).sqrt());
        }
    }
    best.clamp(0.0, 1.0)
}

/// Voicing per mel frame: frame `t` scores `window` samples centered on the
/// middle of its hop `[t*hop, (t+1)*hop)`, clipped to the signal.
pub fn frame_voicing(audio: &AudioBuffer, n_frames: usize, hop: usize, window: usize) -> Vec<f64> {
    let x = &audio.samples;
    (0..n_frames)
        .map(|t| {
            let center = t * hop + hop / 2;
            let lo = center.saturating_sub(window / 2).min(x.len());
            let hi = (lo + window).min(x.len());
            voicing_score(&x[lo..hi], audio.sample_rate)
        })
        .collect()
}

/// Adds `noise` (looped from a random offset) scaled to the requested SNR.
/// An infinite SNR or a silent clean signal returns `clean` unchanged; the
/// mix is peak-normalized if it would clip.
pub fn mix_noise<R: Rng + ?Sized>(clean: &AudioBuffer, noise: &AudioBuffer, snr_db: f64, rng: &mut R) -> Result<AudioBuffer> {
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::Config(format!(
            "clean audio at {} Hz, noise at {} Hz",
            clean.sample_rate, noise.sample_rate
        )));
    }
    if snr_db.is_nan() {
        return Err(Error::Config("SNR is NaN".into()));
    }
    let pc = clean.power();
    if snr_db == f64::INFINITY || pc == 0.0 || clean.is_empty() {
        return Ok(clean.clone());
    }
    if noise.is_empty() || noise.power() == 0.0 {
        return Err(Error::Config("noise signal is silent".into()));
    }
    let offset = rng.gen_range(0..noise.len());
    let looped: Vec<f64> = (0..clean.len()).map(|i| noise.samples[(offset + i) % noise.len()]).collect();
    let pn = looped.iter().map(|v| v * v).sum::<f64>() / looped.len() as f64;
    if pn == 0.0 {
        return Err(Error::Config("noise excerpt is silent".into()));
    }
    let gain = (pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut out: Vec<f64> = clean.samples.iter().zip(&looped).map(|(c, n)| c + gain * n).collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        out.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(AudioBuffer::new(out, clean.sample_rate))
}
