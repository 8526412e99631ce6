use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{DatasetManifest, Split};
use super::signal::{frame_voicing, mix_noise};
use crate::audio::{load_wav, AudioBuffer};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, MelAnalyzer};
use crate::filterbank::BandSignals;
use crate::mol::{BaselineSpec, Regularizer};
use crate::model::{LossConfig, LossTerms, ModelConfig, Segment, WaveGruModel};
use crate::nn::{prune_update, Adam, AdamConfig, Checkpoint, Module, PruningSchedule};
use crate::quant::QuantizerModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerKind {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub nu: f64,
    pub regularizer: RegularizerKind,
    /// Floor `a` of the log regularizer.
    pub log_floor: f64,
    pub reg_bands: usize,
    pub batch_size: usize,
    /// Mel frames per training segment.
    pub segment_frames: usize,
    pub steps: u64,
    pub seed: u64,
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub prune: bool,
    pub prune_start: u64,
    pub prune_end: u64,
    pub target_sparsity: f64,
    pub prune_interval: u64,
    pub gamma0: f64,
    pub baseline_mu0: f64,
    pub baseline_s0: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl TrainConfig {
    pub fn toy() -> Self {
        let adam = AdamConfig::default();
        Self {
            nu: 0.01,
            regularizer: RegularizerKind::Log,
            log_floor: 1e-4,
            reg_bands: 2,
            batch_size: 16,
            segment_frames: 4,
            steps: 2000,
            seed: 0,
            snr_db_min: 0.0,
            snr_db_max: 40.0,
            prune: false,
            prune_start: 200,
            prune_end: 1500,
            target_sparsity: 0.92,
            prune_interval: 50,
            gamma0: 0.0,
            baseline_mu0: 0.0,
            baseline_s0: 1.0,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            checkpoint_interval: 500,
        }
    }

    pub fn full() -> Self {
        Self {
            batch_size: 256,
            steps: 7_500_000,
            prune_start: 100_000,
            prune_end: 3_000_000,
            prune_interval: 1000,
            checkpoint_interval: 50_000,
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu >= 0.0) {
            return Err(Error::Config("nu must be nonnegative".into()));
        }
        if !(self.snr_db_min <= self.snr_db_max) {
            return Err(Error::Config("snr_db_min exceeds snr_db_max".into()));
        }
        if self.batch_size == 0 || self.segment_frames == 0 {
            return Err(Error::Config("batch_size and segment_frames must be positive".into()));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        if let Some(b) = self.baseline() {
            b.validate()?;
        }
        if let Some(s) = self.pruning() {
            s.validate()?;
        }
        Ok(())
    }

    pub fn regularizer(&self) -> Regularizer {
        match self.regularizer {
            RegularizerKind::Linear => Regularizer::Linear,
            RegularizerKind::Log => Regularizer::Log { floor: self.log_floor },
        }
    }

    pub fn baseline(&self) -> Option<BaselineSpec> {
        (self.gamma0 > 0.0).then_some(BaselineSpec {
            gamma0: self.gamma0,
            mu0: self.baseline_mu0,
            s0: self.baseline_s0,
        })
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            nu: self.nu,
            regularizer: self.regularizer(),
            baseline: self.baseline(),
            reg_bands: self.reg_bands,
        }
    }

    pub fn pruning(&self) -> Option<PruningSchedule> {
        self.prune.then_some(PruningSchedule {
            start_step: self.prune_start,
            end_step: self.prune_end,
            target_sparsity: self.target_sparsity,
            interval: self.prune_interval,
        })
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// One training utterance and its optional noise source.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub clean: AudioBuffer,
    pub noise: Option<AudioBuffer>,
}

/// Loads the training split of a manifest; all files must exist.
pub fn load_training_set(manifest: &DatasetManifest, sample_rate: u32) -> Result<Vec<Utterance>> {
    let missing = manifest.missing_files();
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("missing files: {}", list.join(", ")),
        )));
    }
    let check = |a: AudioBuffer| {
        if a.sample_rate != sample_rate {
            return Err(Error::Config(format!("audio at {} Hz, expected {sample_rate} Hz", a.sample_rate)));
        }
        Ok(a)
    };
    manifest
        .split(Split::Train)
        .map(|e| {
            Ok(Utterance {
                clean: check(load_wav(&e.clean)?)?,
                noise: e.noise.as_ref().map(|p| load_wav(p).and_then(check)).transpose()?,
            })
        })
        .collect()
}

/// Model inputs derived from one waveform.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub mels: Vec<Vec<f64>>,
    pub bands: BandSignals,
    pub voicing: Vec<f64>,
}

/// Computes (optionally quantized) log mel frames, band signals and per-frame
/// voicing for `audio`.
pub fn prepare(
    audio: &AudioBuffer,
    analyzer: &MelAnalyzer,
    model: &WaveGruModel,
    quantizer: Option<&QuantizerModel>,
) -> Result<Prepared> {
    let mut frames = analyzer.process(audio)?;
    if let Some(q) = quantizer {
        frames = q.quantize_frames(&frames)?;
    }
    let mels: Vec<Vec<f64>> = frames.into_iter().map(|f| f.values).collect();
    let cfg = analyzer.config();
    let voicing = frame_voicing(audio, mels.len(), cfg.hop_len(), cfg.window_len());
    Ok(Prepared {
        bands: model.analyze(audio)?,
        mels,
        voicing,
    })
}

/// Per-step summary appended to the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub terms: LossTerms,
    pub sparsity: f64,
}

pub const METRICS_HEADER: &str = "step,nll,jvar,sigma_mean,sparsity";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step, self.terms.nll, self.terms.jvar, self.terms.sigma_mean, self.sparsity
        )
    }
}

/// Deterministic teacher-forced training loop. Step `s` draws all of its
/// randomness from stream `s` of a generator seeded with the configured seed,
/// so a resumed run replays exactly.
pub struct Trainer<'q> {
    pub model: WaveGruModel,
    pub adam: Adam,
    pub config: TrainConfig,
    pub step: u64,
    digest: [u8; 8],
    analyzer: MelAnalyzer,
    quantizer: Option<&'q QuantizerModel>,
    data: Vec<Utterance>,
    cache: Vec<Option<Prepared>>,
}

impl<'q> Trainer<'q> {
    pub fn new(
        model_cfg: ModelConfig,
        features: &FeatureConfig,
        config: TrainConfig,
        data: Vec<Utterance>,
        quantizer: Option<&'q QuantizerModel>,
        digest: [u8; 8],
    ) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Config("no training utterances".into()));
        }
        if features.n_mels != model_cfg.n_mels || features.sample_rate != model_cfg.sample_rate {
            return Err(Error::Config("feature and model configs disagree on n_mels or sample rate".into()));
        }
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        init.set_stream(u64::MAX);
        let model = WaveGruModel::new(model_cfg, &mut init)?;
        if model.steps_per_frame() != features.hop_len() / model.config.n_bands
            || features.hop_len() % model.config.n_bands != 0
        {
            return Err(Error::Config(format!(
                "a mel hop of {} samples does not match {} GRU steps per frame",
                features.hop_len(),
                model.steps_per_frame()
            )));
        }
        let analyzer = MelAnalyzer::new(features)?;
        let mut trainer = Self {
            model,
            adam: Adam::new(config.adam()),
            config,
            step: 0,
            digest,
            analyzer,
            quantizer,
            cache: vec![None; data.len()],
            data,
        };
        for i in 0..trainer.data.len() {
            if trainer.data[i].noise.is_none() {
                let p = prepare(&trainer.data[i].clean, &trainer.analyzer, &trainer.model, trainer.quantizer)?;
                trainer.cache[i] = Some(p);
            }
        }
        Ok(trainer)
    }

    pub fn digest(&self) -> [u8; 8] {
        self.digest
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.model, self.digest, self.step, self.adam.t, self.adam.skipped)
    }

    /// Continues from `ck`; its digest must match this trainer's.
    pub fn resume(&mut self, ck: &Checkpoint) -> Result<()> {
        if ck.digest != self.digest {
            return Err(Error::Version("checkpoint was written under a different configuration".into()));
        }
        ck.restore_into(&mut self.model)?;
        self.step = ck.step;
        self.adam.t = ck.adam_t;
        self.adam.skipped = ck.adam_skipped;
        Ok(())
    }

    pub fn sparsity(&self) -> f64 {
        let (mut masked, mut total) = (0usize, 0usize);
        self.model.visit(&mut |p| {
            if p.prunable {
                masked += p.masked_count();
                total += p.len();
            }
        });
        if total == 0 {
            0.0
        } else {
            masked as f64 / total as f64
        }
    }

    fn draw_batch(&self, rng: &mut ChaCha8Rng) -> Result<Vec<Segment>> {
        let spf = self.model.steps_per_frame();
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let idx = rng.gen_range(0..self.data.len());
            let fresh;
            let prepared = match (&self.cache[idx], &self.data[idx].noise) {
                (Some(p), _) => p,
                (None, Some(noise)) => {
                    let snr = rng.gen_range(self.config.snr_db_min..=self.config.snr_db_max);
                    let mixed = mix_noise(&self.data[idx].clean, noise, snr, rng)?;
                    fresh = prepare(&mixed, &self.analyzer, &self.model, self.quantizer)?;
                    &fresh
                }
                (None, None) => unreachable!("clean-only utterances are cached"),
            };
            let usable = prepared.mels.len().min(prepared.bands.len().div_ceil(spf));
            if usable == 0 {
                return Err(Error::Config("training utterance shorter than one frame".into()));
            }
            let max_start = usable.saturating_sub(self.config.segment_frames);
            let frame = rng.gen_range(0..=max_start);
            batch.push(Segment::from_utterance(
                &prepared.mels[..usable],
                &prepared.bands,
                &prepared.voicing,
                frame,
                self.config.segment_frames,
                spf,
            )?);
        }
        Ok(batch)
    }

    /// Runs the next step. A non-finite loss is reported as a numeric error
    /// without touching the parameters.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let step = self.step + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step);
        let batch = self.draw_batch(&mut rng)?;
        let loss = self.config.loss();
        self.model.zero_grad();
        let terms = self.model.batch_loss(&batch, &loss)?;
        if !terms.loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at step {step}: {terms:?}")));
        }
        self.adam.step_module(&mut self.model);
        if let Some(schedule) = self.config.pruning() {
            if schedule.is_update_step(step) {
                self.model.visit_mut(&mut |p| prune_update(p, &schedule, step));
            }
        }
        self.step = step;
        Ok(StepMetrics {
            step,
            terms,
            sparsity: self.sparsity(),
        })
    }

    /// Trains until `config.steps`. With an output directory, appends to
    /// `metrics.csv` and writes `ckpt-<step>.lvrw` every checkpoint interval
    /// plus `final.lvrw`. On a numeric failure the last good checkpoint is
    /// kept and a `diagnostics.txt` is written.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<Vec<StepMetrics>> {
        let mut log = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join("metrics.csv");
                let fresh = !path.exists();
                let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
                if fresh {
                    writeln!(f, "{METRICS_HEADER}")?;
                }
                Some(f)
            }
            None => None,
        };
        let mut history = Vec::new();
        while self.step < self.config.steps {
            let metrics = match self.train_step() {
                Ok(m) => m,
                Err(e) => {
                    if let Some(dir) = out_dir {
                        std::fs::write(
                            dir.join("diagnostics.txt"),
                            format!("failed at step {}: {e}\nlast good step: {}\n", self.step + 1, self.step),
                        )?;
                    }
                    return Err(e);
                }
            };
            if let Some(f) = log.as_mut() {
                writeln!(f, "{}", metrics.csv_row())?;
            }
            if metrics.step % 100 == 0 {
                log::info!(
                    "step {} nll {:.4} jvar {:.4} sigma {:.4} sparsity {:.3}",
                    metrics.step,
                    metrics.terms.nll,
                    metrics.terms.jvar,
                    metrics.terms.sigma_mean,
                    metrics.sparsity
                );
            }
            history.push(metrics);
            if let Some(dir) = out_dir {
                let every = self.config.checkpoint_interval;
                if every > 0 && self.step % every == 0 {
                    self.checkpoint().save(checkpoint_path(dir, self.step))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.checkpoint().save(dir.join("final.lvrw"))?;
        }
        Ok(history)
    }
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt-{step:08}.lvrw"))
}
