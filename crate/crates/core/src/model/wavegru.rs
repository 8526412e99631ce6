use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cond::{CondCache, ConditioningStack, LEFT_CONTEXT, LOOKAHEAD, UPSAMPLE};
use crate::audio::AudioBuffer;
use crate::binio::checksum8;
use crate::error::{Error, Result};
use crate::filterbank::{BandSignals, Filterbank, FilterbankSpec};
use crate::mol::{self, BaselineSpec, ElementObjective, Regularizer};
use crate::nn::{Dense, GruCache, GruCell, Module, Parameter};

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub sample_rate: u32,
    /// Mel frames per second.
    pub frame_rate: u32,
    pub n_bands: usize,
    pub n_mix: usize,
    pub gru_state: usize,
    pub cond_channels: usize,
    pub n_mels: usize,
    /// Blocks in the GRU gate matrices; 1 is dense.
    #[serde(default = "one")]
    pub gru_blocks: usize,
}

impl ModelConfig {
    pub fn full() -> Self {
        Self {
            sample_rate: 16000,
            frame_rate: 50,
            n_bands: 4,
            n_mix: 8,
            gru_state: 1024,
            cond_channels: 512,
            n_mels: 160,
            gru_blocks: 1,
        }
    }

    pub fn toy() -> Self {
        Self {
            sample_rate: 8000,
            frame_rate: 50,
            n_bands: 4,
            n_mix: 4,
            gru_state: 64,
            cond_channels: 64,
            n_mels: 32,
            gru_blocks: 1,
        }
    }

    /// GRU updates per second, `sample_rate / N`.
    pub fn gru_rate(&self) -> u32 {
        self.sample_rate / self.n_bands as u32
    }

    /// Repetitions of each conditioning vector to reach the GRU rate.
    pub fn tile_factor(&self) -> Result<usize> {
        let cond_rate = self.frame_rate as usize * UPSAMPLE;
        let gru = self.gru_rate() as usize;
        if cond_rate == 0 || gru % cond_rate != 0 || gru < cond_rate {
            return Err(Error::Config(format!(
                "GRU rate {gru} Hz is not a positive multiple of the conditioning rate {cond_rate} Hz"
            )));
        }
        Ok(gru / cond_rate)
    }

    /// GRU steps per mel frame.
    pub fn steps_per_frame(&self) -> Result<usize> {
        Ok(self.tile_factor()? * UPSAMPLE)
    }

    /// Raw outputs per step, `N * K * 3`.
    pub fn output_dim(&self) -> usize {
        self.n_bands * self.n_mix * 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bands == 0 || self.n_mix == 0 || self.gru_state == 0 || self.cond_channels == 0 || self.n_mels == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if self.sample_rate % self.n_bands as u32 != 0 {
            return Err(Error::Config(format!(
                "sample rate {} is not divisible by {} bands",
                self.sample_rate, self.n_bands
            )));
        }
        if self.gru_blocks == 0 || self.gru_state % self.gru_blocks != 0 {
            return Err(Error::Config(format!(
                "GRU state {} is not divisible into {} blocks",
                self.gru_state, self.gru_blocks
            )));
        }
        FilterbankSpec::new(self.n_bands).validate()?;
        self.tile_factor().map(|_| ())
    }
}

/// Objective settings for teacher-forced training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub nu: f64,
    pub regularizer: Regularizer,
    pub baseline: Option<BaselineSpec>,
    /// The variance term covers bands `0..reg_bands`.
    pub reg_bands: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            nu: 0.0,
            regularizer: Regularizer::Log { floor: 1e-4 },
            baseline: None,
            reg_bands: 2,
        }
    }
}

/// Loss decomposition for one segment or batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    /// Objective value, `nll + nu * mean(voicing * reg)`.
    pub loss: f64,
    /// Mean negative log-likelihood per band sample.
    pub nll: f64,
    /// Mean unweighted variance regularizer over the regularized bands.
    pub jvar: f64,
    /// Mean predictive standard deviation over the regularized bands.
    pub sigma_mean: f64,
}

impl LossTerms {
    pub fn scaled_add(&mut self, other: &LossTerms, w: f64) {
        self.loss += w * other.loss;
        self.nll += w * other.nll;
        self.jvar += w * other.jvar;
        self.sigma_mean += w * other.sigma_mean;
    }
}

/// Teacher-forcing window cut from an utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// Mel frames covering the targets plus the context the stack needs.
    pub mels: Vec<Vec<f64>>,
    /// Index into `mels` of the frame holding the first target step.
    pub first_frame: usize,
    /// Band samples of the step before the first target.
    pub prev: Vec<f64>,
    /// Target band samples, one `N`-vector per step.
    pub targets: Vec<Vec<f64>>,
    /// Voicing weight per frame, starting at `first_frame`.
    pub voicing: Vec<f64>,
}

impl Segment {
    /// Cuts frames `frame..frame + n_frames` (clipped to the utterance).
    pub fn from_utterance(
        mels: &[Vec<f64>],
        bands: &BandSignals,
        voicing: &[f64],
        frame: usize,
        n_frames: usize,
        steps_per_frame: usize,
    ) -> Result<Self> {
        let start = frame * steps_per_frame;
        if frame >= mels.len() || start >= bands.len() || voicing.len() < mels.len() {
            return Err(Error::Shape(format!(
                "segment at frame {frame} lies outside an utterance of {} frames / {} steps",
                mels.len(),
                bands.len()
            )));
        }
        let lo = frame.saturating_sub(LEFT_CONTEXT);
        let hi = (frame + n_frames + LOOKAHEAD).min(mels.len());
        let end = ((frame + n_frames) * steps_per_frame).min(bands.len()).min(mels.len() * steps_per_frame);
        let prev = if start == 0 {
            vec![0.0; bands.n_bands()]
        } else {
            bands.frame(start - 1)
        };
        Ok(Self {
            mels: mels[lo..hi].to_vec(),
            first_frame: frame - lo,
            prev,
            targets: (start..end).map(|t| bands.frame(t)).collect(),
            voicing: voicing[frame..(frame + n_frames).min(mels.len())].to_vec(),
        })
    }
}

/// Per-step teacher-forced statistics under the inference distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTrace {
    pub n_bands: usize,
    /// `-log q` per step and band, step-major.
    pub nll: Vec<f64>,
    /// Predictive standard deviation per step and band, step-major.
    pub sigma: Vec<f64>,
}

impl EvalTrace {
    pub fn steps(&self) -> usize {
        self.nll.len() / self.n_bands.max(1)
    }

    pub fn mean_nll(&self) -> f64 {
        self.nll.iter().sum::<f64>() / self.nll.len().max(1) as f64
    }

    pub fn sigma_at(&self, step: usize, band: usize) -> f64 {
        self.sigma[step * self.n_bands + band]
    }
}

struct Tape {
    cond_cache: CondCache,
    cond_len: usize,
    first_frame: usize,
    records: Vec<StepRecord>,
}

struct StepRecord {
    prev: Vec<f64>,
    h: Vec<f64>,
    gru: GruCache,
    draw: Vec<f64>,
}

/// Multi-band WaveGRU: conditioning stack, input projection of the previous
/// band samples, GRU cell and output projection to `N * K * 3` raw mixture
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveGruModel {
    pub config: ModelConfig,
    pub cond: ConditioningStack,
    pub input_proj: Dense,
    pub gru: GruCell,
    pub out: Dense,
    filterbank: Filterbank,
    tile: usize,
}

impl WaveGruModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let h = config.gru_state;
        let cond = ConditioningStack::new(config.n_mels, config.cond_channels, h, rng)?;
        let mut input_proj = Dense::new("in_proj", config.n_bands, h, 1, rng)?;
        let gru = GruCell::new("gru", h, h, config.gru_blocks, rng)?;
        let mut out = Dense::new("out_proj", h, config.output_dim(), 1, rng)?;
        input_proj.w.w.prunable = true;
        out.w.w.prunable = true;
        let filterbank = Filterbank::new(FilterbankSpec::new(config.n_bands))?;
        let tile = config.tile_factor()?;
        Ok(Self {
            config,
            cond,
            input_proj,
            gru,
            out,
            filterbank,
            tile,
        })
    }

    pub fn filterbank(&self) -> &Filterbank {
        &self.filterbank
    }

    pub fn tile_factor(&self) -> usize {
        self.tile
    }

    pub fn steps_per_frame(&self) -> usize {
        self.tile * UPSAMPLE
    }

    pub fn analyze(&self, audio: &AudioBuffer) -> Result<BandSignals> {
        if audio.sample_rate != self.config.sample_rate {
            return Err(Error::Config(format!(
                "audio at {} Hz, model expects {} Hz",
                audio.sample_rate, self.config.sample_rate
            )));
        }
        Ok(self.filterbank.analyze(&audio.samples, audio.sample_rate as f64))
    }

    /// Conditioning at the GRU rate: stack output with each vector tiled.
    pub fn cond_forward(&self, mels: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let (out, _) = self.cond.forward(mels)?;
        Ok(out
            .into_iter()
            .flat_map(|v| std::iter::repeat_n(v, self.tile))
            .collect())
    }

    /// First 8 bytes of SHA-256 over all parameter names and values.
    pub fn checksum(&self) -> [u8; 8] {
        let mut bytes = Vec::new();
        self.visit(&mut |p| {
            bytes.extend_from_slice(p.name.as_bytes());
            for v in p.values() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        });
        checksum8(&bytes)
    }

    fn check_segment(&self, seg: &Segment) -> Result<()> {
        let n = self.config.n_bands;
        let spf = self.steps_per_frame();
        if seg.targets.is_empty() || seg.prev.len() != n || seg.targets.iter().any(|t| t.len() != n) {
            return Err(Error::Shape("segment targets must be nonempty N-vectors".into()));
        }
        let frames = seg.targets.len().div_ceil(spf);
        if seg.first_frame + frames > seg.mels.len() || seg.voicing.len() < frames {
            return Err(Error::Shape("segment has too few mel frames or voicing weights".into()));
        }
        if seg.mels.iter().any(|m| m.len() != self.config.n_mels) {
            return Err(Error::Shape(format!("mel frames must have {} values", self.config.n_mels)));
        }
        Ok(())
    }

    fn run_segment(&self, seg: &Segment, loss: &LossConfig, weight: Option<f64>) -> Result<(LossTerms, Option<Tape>)> {
        self.check_segment(seg)?;
        let (n, k3) = (self.config.n_bands, 3 * self.config.n_mix);
        let steps = seg.targets.len();
        let reg_bands = loss.reg_bands.min(n);
        let objective = ElementObjective {
            regularizer: loss.regularizer,
            baseline: loss.baseline,
        };
        let (cond_out, cond_cache) = self.cond.forward(&seg.mels)?;
        let spf = self.steps_per_frame();
        let cond_index = |t: usize| seg.first_frame * UPSAMPLE + t / self.tile;

        let w = weight.unwrap_or(0.0);
        let w_nll = w / (steps * n) as f64;
        let reg_norm = if reg_bands > 0 { 1.0 / (steps * reg_bands) as f64 } else { 0.0 };

        let mut h = vec![0.0; self.config.gru_state];
        let mut prev = seg.prev.clone();
        let mut records = Vec::with_capacity(if weight.is_some() { steps } else { 0 });
        let (mut nll_sum, mut reg_sum, mut wreg_sum, mut sigma_sum) = (0.0, 0.0, 0.0, 0.0);
        let mut x = vec![0.0; self.config.gru_state];
        let mut raw = vec![0.0; self.config.output_dim()];
        for t in 0..steps {
            self.input_proj.forward_into(&prev, &mut x);
            for (xi, ci) in x.iter_mut().zip(&cond_out[cond_index(t)]) {
                *xi += ci;
            }
            let (h_new, cache) = self.gru.step(&x, &h);
            self.out.forward_into(&h_new, &mut raw);
            let voicing = seg.voicing[t / spf];
            let mut draw = vec![0.0; raw.len()];
            for b in 0..n {
                let slice = &raw[b * k3..(b + 1) * k3];
                let reg_w = if b < reg_bands { w * loss.nu * voicing * reg_norm } else { 0.0 };
                let terms = objective.accumulate(seg.targets[t][b], slice, w_nll, reg_w, &mut draw[b * k3..(b + 1) * k3]);
                if !terms.nll.is_finite() {
                    return Err(Error::Numeric(format!("non-finite likelihood at step {t}, band {b}")));
                }
                nll_sum += terms.nll;
                if b < reg_bands {
                    reg_sum += terms.reg;
                    wreg_sum += voicing * terms.reg;
                    sigma_sum += terms.variance.sqrt();
                }
            }
            if weight.is_some() {
                records.push(StepRecord {
                    prev: std::mem::replace(&mut prev, seg.targets[t].clone()),
                    h: h_new.clone(),
                    gru: cache,
                    draw,
                });
            } else {
                prev.clone_from(&seg.targets[t]);
            }
            h = h_new;
        }

        let nll = nll_sum / (steps * n) as f64;
        let terms = LossTerms {
            loss: nll + loss.nu * wreg_sum * reg_norm,
            nll,
            jvar: reg_sum * reg_norm,
            sigma_mean: sigma_sum * reg_norm,
        };
        let tape = weight.map(|_| Tape {
            cond_cache,
            cond_len: cond_out.len(),
            first_frame: seg.first_frame,
            records,
        });
        Ok((terms, tape))
    }

    fn backward(&mut self, tape: Tape) {
        let mut dcond = vec![vec![0.0; self.config.gru_state]; tape.cond_len];
        let mut dh_next = vec![0.0; self.config.gru_state];
        for (t, rec) in tape.records.iter().enumerate().rev() {
            let mut dh = dh_next;
            self.out.backward(&rec.h, &rec.draw, Some(&mut dh));
            let (dx, dh_prev) = self.gru.backward(&rec.gru, &dh);
            self.input_proj.backward(&rec.prev, &dx, None);
            let c = tape.first_frame * UPSAMPLE + t / self.tile;
            for (a, b) in dcond[c].iter_mut().zip(&dx) {
                *a += b;
            }
            dh_next = dh_prev;
        }
        self.cond.backward(&tape.cond_cache, &dcond);
    }

    /// Teacher-forced objective on one segment; gradients scaled by `weight`
    /// are added to the parameter accumulators.
    pub fn segment_loss(&mut self, seg: &Segment, loss: &LossConfig, weight: f64) -> Result<LossTerms> {
        let (terms, tape) = self.run_segment(seg, loss, Some(weight))?;
        self.backward(tape.expect("tape is recorded when a weight is given"));
        Ok(terms)
    }

    /// Objective value only.
    pub fn segment_loss_value(&self, seg: &Segment, loss: &LossConfig) -> Result<LossTerms> {
        Ok(self.run_segment(seg, loss, None)?.0)
    }

    /// Mean objective over a batch with gradients accumulated; duplicated
    /// segments leave the value unchanged.
    pub fn batch_loss(&mut self, batch: &[Segment], loss: &LossConfig) -> Result<LossTerms> {
        if batch.is_empty() {
            return Err(Error::Config("empty training batch".into()));
        }
        let w = 1.0 / batch.len() as f64;
        let mut total = LossTerms::default();
        for seg in batch {
            let terms = self.segment_loss(seg, loss, w)?;
            total.scaled_add(&terms, w);
        }
        Ok(total)
    }

    /// Teacher-forced statistics over a whole utterance under the
    /// inference-time distribution.
    pub fn evaluate(&self, mels: &[Vec<f64>], bands: &BandSignals) -> Result<EvalTrace> {
        let n = self.config.n_bands;
        let k3 = 3 * self.config.n_mix;
        let cond = self.cond_forward(mels)?;
        if bands.len() > cond.len() {
            return Err(Error::Shape(format!(
                "{} band steps but conditioning covers only {}",
                bands.len(),
                cond.len()
            )));
        }
        let mut h = vec![0.0; self.config.gru_state];
        let mut prev = vec![0.0; n];
        let mut x = vec![0.0; self.config.gru_state];
        let mut raw = vec![0.0; self.config.output_dim()];
        let mut nll = Vec::with_capacity(bands.len() * n);
        let mut sigma = Vec::with_capacity(bands.len() * n);
        for (t, c) in cond.iter().enumerate().take(bands.len()) {
            self.input_proj.forward_into(&prev, &mut x);
            x.iter_mut().zip(c).for_each(|(a, b)| *a += b);
            h = self.gru.step(&x, &h).0;
            self.out.forward_into(&h, &mut raw);
            let target = bands.frame(t);
            for b in 0..n {
                let p = mol::constrain(&raw[b * k3..(b + 1) * k3])?;
                nll.push(-mol::log_prob(target[b], &p));
                sigma.push(mol::mixture_variance(&p).sqrt());
            }
            prev = target;
        }
        Ok(EvalTrace { n_bands: n, nll, sigma })
    }

    /// Mean teacher-forced negative log-likelihood per band sample, in nats.
    pub fn nll_eval(&self, audio: &AudioBuffer, mels: &[Vec<f64>]) -> Result<f64> {
        let bands = self.analyze(audio)?;
        Ok(self.evaluate(mels, &bands)?.mean_nll())
    }

    /// Autoregressive sampling of `steps` band frames.
    pub fn generate_bands<R: Rng + ?Sized>(&self, mels: &[Vec<f64>], steps: usize, rng: &mut R) -> Result<BandSignals> {
        let n = self.config.n_bands;
        let k3 = 3 * self.config.n_mix;
        let cond = self.cond_forward(mels)?;
        if steps > cond.len() {
            return Err(Error::Shape(format!(
                "requested {steps} steps but conditioning covers only {}",
                cond.len()
            )));
        }
        let mut h = vec![0.0; self.config.gru_state];
        let mut prev = vec![0.0; n];
        let mut x = vec![0.0; self.config.gru_state];
        let mut raw = vec![0.0; self.config.output_dim()];
        let mut frames = Vec::with_capacity(steps);
        for c in cond.iter().take(steps) {
            self.input_proj.forward_into(&prev, &mut x);
            x.iter_mut().zip(c).for_each(|(a, b)| *a += b);
            h = self.gru.step(&x, &h).0;
            self.out.forward_into(&h, &mut raw);
            for b in 0..n {
                let p = mol::constrain(&raw[b * k3..(b + 1) * k3])?;
                prev[b] = mol::sample(&p, rng).clamp(-1.0, 1.0);
            }
            frames.push(prev.clone());
        }
        Ok(BandSignals::from_frames(&frames, n, self.config.gru_rate() as f64))
    }

    /// Generates `seconds` of audio (rounded down to a multiple of `N`).
    pub fn generate<R: Rng + ?Sized>(&self, mels: &[Vec<f64>], seconds: f64, rng: &mut R) -> Result<AudioBuffer> {
        let total = (seconds * self.config.sample_rate as f64).floor() as usize;
        let steps = total / self.config.n_bands;
        let bands = self.generate_bands(mels, steps, rng)?;
        let samples = self.filterbank.synthesize(&bands)?;
        Ok(AudioBuffer::new(samples, self.config.sample_rate))
    }

    /// Parameters subject to magnitude pruning.
    pub fn prunable_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.prunable {
                n += p.len()
            }
        });
        n
    }
}

impl Module for WaveGruModel {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.cond.visit(f);
        self.input_proj.visit(f);
        self.gru.visit(f);
        self.out.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.cond.visit_mut(f);
        self.input_proj.visit_mut(f);
        self.gru.visit_mut(f);
        self.out.visit_mut(f);
    }
}
