//! Cosine-modulated pseudo-QMF filterbank.
//!
//! Band `k` uses the lowpass prototype modulated to `(k + 0.5) * pi / N`.
//! The prototype is a Kaiser-windowed sinc whose design frequency is tuned so
//! the prototype passes half power at `pi / (2N)`, which makes adjacent bands
//! power complementary. Analysis and synthesis are both causal FIR, so a
//! round trip delays the signal by `taps - 1` samples.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterbankSpec {
    pub n_bands: usize,
    pub prototype_taps: usize,
    pub kaiser_beta: f64,
}

impl Default for FilterbankSpec {
    fn default() -> Self {
        Self::new(4)
    }
}

impl FilterbankSpec {
    pub fn new(n_bands: usize) -> Self {
        Self {
            n_bands,
            prototype_taps: 128,
            kaiser_beta: 9.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bands == 0 {
            return Err(Error::Config("filterbank needs at least one band".into()));
        }
        if self.prototype_taps == 0 || self.prototype_taps % (2 * self.n_bands) != 0 {
            return Err(Error::Config(format!(
                "prototype_taps {} must be a positive multiple of 2*n_bands",
                self.prototype_taps
            )));
        }
        Ok(())
    }

    /// Nominal prototype cutoff in radians/sample.
    pub fn cutoff(&self) -> f64 {
        PI / (2.0 * self.n_bands as f64)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

pub fn kaiser_window(len: usize, beta: f64) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = bessel_i0(beta);
    (0..len)
        .map(|n| {
            let r = 2.0 * n as f64 / (len - 1) as f64 - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

/// Magnitude response of a real FIR filter at `omega` radians/sample.
pub fn magnitude_response(h: &[f64], omega: f64) -> f64 {
    let (re, im) = h.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, &c)| {
        let ph = omega * n as f64;
        (re + c * ph.cos(), im - c * ph.sin())
    });
    re.hypot(im)
}

/// Unit-DC-gain symmetric windowed sinc with design frequency `wc`.
fn windowed_sinc(taps: usize, wc: f64, window: &[f64]) -> Vec<f64> {
    let center = (taps - 1) as f64 / 2.0;
    let mut h = vec![0.0; taps];
    for n in 0..taps.div_ceil(2) {
        let t = n as f64 - center;
        let sinc = if t == 0.0 { wc / PI } else { (wc * t).sin() / (PI * t) };
        h[n] = sinc * window[n];
        h[taps - 1 - n] = h[n];
    }
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|c| *c /= sum);
    h
}

/// Kaiser-windowed sinc prototype with `|P(pi/2N)| = |P(0)| / sqrt(2)` and
/// unit DC gain.
pub fn design_prototype(spec: &FilterbankSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let taps = spec.prototype_taps;
    let window = kaiser_window(taps, spec.kaiser_beta);
    let target = spec.cutoff();
    let (mut lo, mut hi) = (0.5 * target, 2.0 * target);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let h = windowed_sinc(taps, mid, &window);
        if magnitude_response(&h, target) < FRAC_1_SQRT_2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(windowed_sinc(taps, 0.5 * (lo + hi), &window))
}

/// Critically sampled band signals, one `Vec` per band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSignals {
    pub bands: Vec<Vec<f64>>,
    pub band_rate: f64,
}

impl BandSignals {
    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    /// Samples per band.
    pub fn len(&self) -> usize {
        self.bands.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `N` band samples of step `t`.
    pub fn frame(&self, t: usize) -> Vec<f64> {
        self.bands.iter().map(|b| b[t]).collect()
    }

    /// Builds band signals from per-step frames of `N` samples.
    pub fn from_frames(frames: &[Vec<f64>], n_bands: usize, band_rate: f64) -> Self {
        let bands = (0..n_bands)
            .map(|b| frames.iter().map(|f| f[b]).collect())
            .collect();
        Self { bands, band_rate }
    }

    pub fn energy(&self) -> f64 {
        self.bands.iter().flatten().map(|x| x * x).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filterbank {
    spec: FilterbankSpec,
    prototype: Vec<f64>,
    analysis: Vec<Vec<f64>>,
    synthesis: Vec<Vec<f64>>,
}

impl Filterbank {
    pub fn new(spec: FilterbankSpec) -> Result<Self> {
        let prototype = design_prototype(&spec)?;
        let n = spec.n_bands;
        let taps = spec.prototype_taps;
        let center = (taps - 1) as f64 / 2.0;
        let modulated = |k: usize, sign: f64| -> Vec<f64> {
            let phase = if k % 2 == 0 { FRAC_PI_4 } else { -FRAC_PI_4 };
            prototype
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    let arg = (2 * k + 1) as f64 * PI / (2 * n) as f64 * (i as f64 - center);
                    2.0 * p * (arg + sign * phase).cos()
                })
                .collect()
        };
        let analysis = (0..n).map(|k| modulated(k, 1.0)).collect();
        let synthesis = (0..n).map(|k| modulated(k, -1.0)).collect();
        Ok(Self {
            spec,
            prototype,
            analysis,
            synthesis,
        })
    }

    pub fn spec(&self) -> &FilterbankSpec {
        &self.spec
    }

    pub fn n_bands(&self) -> usize {
        self.spec.n_bands
    }

    pub fn prototype(&self) -> &[f64] {
        &self.prototype
    }

    pub fn analysis_filter(&self, k: usize) -> &[f64] {
        &self.analysis[k]
    }

    /// Round-trip delay in full-rate samples.
    pub fn group_delay(&self) -> usize {
        self.spec.prototype_taps - 1
    }

    /// Splits `x` into `N` bands at `sample_rate / N`. The input is zero-padded
    /// to a multiple of `N`.
    pub fn analyze(&self, x: &[f64], sample_rate: f64) -> BandSignals {
        let n = self.spec.n_bands;
        let len = x.len().div_ceil(n);
        if x.is_empty() {
            return BandSignals {
                bands: vec![Vec::new(); n],
                band_rate: sample_rate / n as f64,
            };
        }
        let last = x.len() - 1;
        let bands = self
            .analysis
            .iter()
            .map(|h| {
                (0..len)
                    .map(|m| {
                        let t = m * n;
                        let lo = t.saturating_sub(h.len() - 1);
                        // x beyond its end is zero padding
                        (lo..=t.min(last)).map(|j| h[t - j] * x[j]).sum()
                    })
                    .collect()
            })
            .collect();
        BandSignals {
            bands,
            band_rate: sample_rate / n as f64,
        }
    }

    /// Recombines `N` bands into a full-rate signal of `N * len` samples.
    pub fn synthesize(&self, bands: &BandSignals) -> Result<Vec<f64>> {
        let n = self.spec.n_bands;
        if bands.n_bands() != n {
            return Err(Error::Shape(format!(
                "expected {n} bands, got {}",
                bands.n_bands()
            )));
        }
        let len = bands.len();
        if bands.bands.iter().any(|b| b.len() != len) {
            return Err(Error::Shape("band signals differ in length".into()));
        }
        let out_len = len * n;
        let mut y = vec![0.0; out_len];
        let gain = n as f64;
        for (f, band) in self.synthesis.iter().zip(&bands.bands) {
            for (m, &v) in band.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let start = m * n;
                let end = (start + f.len()).min(out_len);
                for (yi, fi) in y[start..end].iter_mut().zip(f) {
                    *yi += gain * v * fi;
                }
            }
        }
        Ok(y)
    }
}

/// SNR in dB of `y` against `x` after removing a `delay`-sample lag.
pub fn delay_compensated_snr_db(x: &[f64], y: &[f64], delay: usize) -> f64 {
    let n = x.len().min(y.len().saturating_sub(delay));
    let (mut sig, mut err) = (0.0, 0.0);
    for i in 0..n {
        sig += x[i] * x[i];
        err += (y[i + delay] - x[i]).powi(2);
    }
    10.0 * (sig / err.max(f64::MIN_POSITIVE)).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn prototype_normalized_and_symmetric() {
        let spec = FilterbankSpec::default();
        let p = design_prototype(&spec).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for i in 0..p.len() {
            assert_eq!(p[i], p[p.len() - 1 - i]);
        }
        let half = magnitude_response(&p, spec.cutoff());
        assert!((half - FRAC_1_SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn prototype_stopband() {
        let spec = FilterbankSpec::default();
        let p = design_prototype(&spec).unwrap();
        let att = -20.0 * magnitude_response(&p, 1.5 * spec.cutoff()).log10();
        assert!(att >= 60.0, "stopband attenuation {att} dB");
    }

    #[test]
    fn invalid_taps() {
        let spec = FilterbankSpec {
            prototype_taps: 60,
            ..FilterbankSpec::default()
        };
        assert!(design_prototype(&spec).is_err());
    }

    #[test]
    fn zero_in_zero_out() {
        let fb = Filterbank::new(FilterbankSpec::default()).unwrap();
        let bands = fb.analyze(&[0.0; 400], 16000.0);
        assert!(bands.bands.iter().flatten().all(|&v| v == 0.0));
        assert!(fb.synthesize(&bands).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noise_round_trip_snr() {
        let fb = Filterbank::new(FilterbankSpec::default()).unwrap();
        let x = noise(32000, 1);
        let y = fb.synthesize(&fb.analyze(&x, 16000.0)).unwrap();
        let snr = delay_compensated_snr_db(&x, &y, fb.group_delay());
        assert!(snr >= 40.0, "{snr}");
    }

    #[test]
    fn low_tone_lands_in_band_zero() {
        let fb = Filterbank::new(FilterbankSpec::default()).unwrap();
        let x: Vec<f64> = (0..16000)
            .map(|n| (2.0 * PI * 100.0 * n as f64 / 16000.0).sin())
            .collect();
        let bands = fb.analyze(&x, 16000.0);
        let e: Vec<f64> = bands.bands.iter().map(|b| b.iter().map(|v| v * v).sum()).collect();
        assert!(e[0] / e.iter().sum::<f64>() >= 0.99);
    }

    #[test]
    fn linear() {
        let fb = Filterbank::new(FilterbankSpec::default()).unwrap();
        let (x, y) = (noise(1000, 2), noise(1000, 3));
        let (a, b) = (0.7, -1.3);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (fx, fy, fm) = (fb.analyze(&x, 1.0), fb.analyze(&y, 1.0), fb.analyze(&mix, 1.0));
        for k in 0..4 {
            for t in 0..fx.len() {
                let want = a * fx.bands[k][t] + b * fy.bands[k][t];
                assert!((fm.bands[k][t] - want).abs() < 1e-9);
            }
        }
        let (sx, sy, sm) = (
            fb.synthesize(&fx).unwrap(),
            fb.synthesize(&fy).unwrap(),
            fb.synthesize(&fm).unwrap(),
        );
        for i in 0..sx.len() {
            assert!((sm[i] - (a * sx[i] + b * sy[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn band_energy_bounded() {
        let fb = Filterbank::new(FilterbankSpec::default()).unwrap();
        for seed in 0..5 {
            let x = noise(4000, seed);
            let ex: f64 = x.iter().map(|v| v * v).sum();
            assert!(fb.analyze(&x, 1.0).energy() <= (1.0 + 1e-3) * ex);
        }
    }

    #[test]
    fn odd_length_is_padded_and_band_count_checked() {
        let fb = Filterbank::new(FilterbankSpec::default()).unwrap();
        let bands = fb.analyze(&noise(10, 4), 1.0);
        assert_eq!(bands.len(), 3);
        let wrong = BandSignals {
            bands: bands.bands[..2].to_vec(),
            band_rate: 1.0,
        };
        assert!(matches!(fb.synthesize(&wrong), Err(Error::Shape(_))));
    }
}
