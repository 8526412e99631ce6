use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::{save_wav, AudioBuffer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub clean: PathBuf,
    pub noise: Option<PathBuf>,
    pub split: Split,
}

/// Newline-delimited `clean [TAB noise [TAB split]]` records. Relative paths
/// resolve against the manifest's directory; `-` or an empty field means no
/// noise; the split defaults to `train`. Blank lines and `#` comments are
/// skipped.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let mut entries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() > 3 || fields[0].is_empty() {
                return Err(Error::Format(format!("manifest line {}: expected clean[\\tnoise[\\tsplit]]", no + 1)));
            }
            let noise = match fields.get(1) {
                None | Some(&"") | Some(&"-") => None,
                Some(p) => Some(resolve(p)),
            };
            let split = match fields.get(2).copied() {
                None | Some("") | Some("train") => Split::Train,
                Some("dev") => Split::Dev,
                Some(other) => return Err(Error::Format(format!("manifest line {}: unknown split {other:?}", no + 1))),
            };
            entries.push(ManifestEntry {
                clean: resolve(fields[0]),
                noise,
                split,
            });
        }
        let train: HashSet<&PathBuf> = entries.iter().filter(|e| e.split == Split::Train).map(|e| &e.clean).collect();
        if let Some(e) = entries.iter().find(|e| e.split == Split::Dev && train.contains(&e.clean)) {
            return Err(Error::Config(format!("{} appears in both train and dev splits", e.clean.display())));
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                let noise = e.noise.as_ref().map_or("-".to_string(), |p| p.display().to_string());
                format!("{}\t{}\t{}\n", e.clean.display(), noise, e.split)
            })
            .collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Referenced files that do not exist, in manifest order.
    pub fn missing_files(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for e in &self.entries {
            for p in std::iter::once(&e.clean).chain(e.noise.as_ref()) {
                if !p.exists() && !out.contains(p) {
                    out.push(p.clone());
                }
            }
        }
        out
    }
}

/// Parameters of the synthetic tone corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub sample_rate: u32,
    pub n_train: usize,
    pub n_dev: usize,
    pub seconds: f64,
    pub seed: u64,
    /// Also write a noise file and reference it from training entries.
    pub with_noise: bool,
}

impl SynthSpec {
    pub fn toy() -> Self {
        Self {
            sample_rate: 8000,
            n_train: 16,
            n_dev: 4,
            seconds: 1.0,
            seed: 0,
            with_noise: false,
        }
    }
}

/// Harmonic tone with slow vibrato. Two kinds of outliers are mixed in:
/// a few longer noise bursts that replace the tone (unvoiced stretches) and
/// sparse millisecond-scale clicks added on top of it. Returns the audio and
/// its nominal fundamental in Hz.
pub fn synth_utterance<R: Rng + ?Sized>(sample_rate: u32, seconds: f64, rng: &mut R) -> (AudioBuffer, f64) {
    let sr = sample_rate as f64;
    let n = (seconds * sr).round() as usize;
    let f0 = rng.gen_range(110.0..260.0);
    let vib_rate = rng.gen_range(4.0..6.0);
    let vib_depth = 0.015;
    let amp = rng.gen_range(0.2..0.4);
    let harmonics = [1.0, 0.5, 0.25, 0.125];
    let norm: f64 = harmonics.iter().sum();

    let burst_len = (0.06 * sr) as usize;
    let n_bursts = ((seconds * 2.0).round() as usize).max(1);
    let bursts: Vec<usize> = (0..n_bursts)
        .map(|_| rng.gen_range(0..n.saturating_sub(burst_len).max(1)))
        .collect();
    let burst_amp = rng.gen_range(0.05..0.2);
    let click_len = (0.003 * sr) as usize;
    let n_clicks = (seconds * CLICKS_PER_SECOND).round() as usize;
    let clicks: Vec<usize> = (0..n_clicks).map(|_| rng.gen_range(0..n.max(1))).collect();
    let fade = (0.01 * sr) as usize;

    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let f = f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t).sin());
        phase += 2.0 * PI * f / sr;
        let tone: f64 = harmonics
            .iter()
            .enumerate()
            .filter(|(h, _)| (*h as f64 + 1.0) * f0 < 0.45 * sr)
            .map(|(h, a)| a * ((h as f64 + 1.0) * phase).sin())
            .sum::<f64>()
            / norm;
        let env = (i.min(n - 1 - i) as f64 / fade as f64).min(1.0);
        let in_burst = bursts.iter().any(|&b| i >= b && i < b + burst_len);
        let mut v = if in_burst {
            let z: f64 = StandardNormal.sample(rng);
            burst_amp * z.clamp(-4.0, 4.0)
        } else {
            amp * env * tone
        };
        if clicks.iter().any(|&c| i >= c && i < c + click_len) {
            let z: f64 = StandardNormal.sample(rng);
            v += 0.5 * amp * z.clamp(-4.0, 4.0);
        }
        out.push(v.clamp(-1.0, 1.0));
    }
    (AudioBuffer::new(out, sample_rate), f0)
}

/// Rate of the short clicks added on top of voiced stretches.
pub const CLICKS_PER_SECOND: f64 = 8.0;

/// Writes `utt_XXX.wav` files (and `noise.wav` if requested) plus
/// `manifest.tsv` into `dir`; returns the manifest path.
pub fn write_synthetic_dataset(dir: impl AsRef<Path>, spec: &SynthSpec) -> Result<PathBuf> {
    let dir = dir.as_ref();
    if spec.n_train == 0 || spec.seconds <= 0.0 {
        return Err(Error::Config("synthetic corpus needs training utterances of positive length".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = if spec.with_noise {
        let n = (2.0 * spec.sample_rate as f64) as usize;
        let mut lp = 0.0;
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                lp = 0.7 * lp + 0.3 * z;
                0.2 * lp
            })
            .collect();
        save_wav(dir.join("noise.wav"), &AudioBuffer::new(samples, spec.sample_rate))?;
        Some(PathBuf::from("noise.wav"))
    } else {
        None
    };
    let mut manifest = DatasetManifest::default();
    for i in 0..spec.n_train + spec.n_dev {
        let (audio, _) = synth_utterance(spec.sample_rate, spec.seconds, &mut rng);
        let name = format!("utt_{i:03}.wav");
        save_wav(dir.join(&name), &audio)?;
        let split = if i < spec.n_train { Split::Train } else { Split::Dev };
        manifest.entries.push(ManifestEntry {
            clean: PathBuf::from(name),
            noise: if split == Split::Train { noise.clone() } else { None },
            split,
        });
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest.to_text())?;
    Ok(path)
}
