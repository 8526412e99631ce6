use crate::audio::AudioBuffer;
use crate::error::Result;
use crate::features::MelAnalyzer;
use crate::model::WaveGruModel;
use crate::quant::QuantizerModel;

use super::trainer::prepare;

/// Frames scoring above this count as voiced in evaluation summaries.
pub const VOICED_THRESHOLD: f64 = 0.8;

/// Teacher-forced statistics for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceEval {
    pub nll_nats: f64,
    pub nll_bits: f64,
    pub steps: usize,
    /// Predictive standard deviations over the regularized bands.
    pub sigma_mean: f64,
    pub sigma_p50: f64,
    pub sigma_p90: f64,
    /// Mean over steps in frames with voicing above [`VOICED_THRESHOLD`];
    /// `None` when no frame qualifies.
    pub sigma_voiced_mean: Option<f64>,
    pub voiced_steps: usize,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Evaluates `model` on `audio` with conditioning computed from the same
/// waveform (quantized when a quantizer is given). `sigma_bands` selects
/// bands `0..sigma_bands` for the predictive-spread statistics.
pub fn evaluate_utterance(
    model: &WaveGruModel,
    analyzer: &MelAnalyzer,
    audio: &AudioBuffer,
    quantizer: Option<&QuantizerModel>,
    sigma_bands: usize,
) -> Result<UtteranceEval> {
    let p = prepare(audio, analyzer, model, quantizer)?;
    let spf = model.steps_per_frame();
    let usable = p.bands.len().min(p.mels.len() * spf);
    let bands = crate::filterbank::BandSignals {
        bands: p.bands.bands.iter().map(|b| b[..usable].to_vec()).collect(),
        band_rate: p.bands.band_rate,
    };
    let trace = model.evaluate(&p.mels, &bands)?;
    let nb = sigma_bands.clamp(1, trace.n_bands);
    let mut all = Vec::with_capacity(usable * nb);
    let (mut voiced_sum, mut voiced_n) = (0.0, 0usize);
    for t in 0..trace.steps() {
        let voiced = p.voicing[t / spf] > VOICED_THRESHOLD;
        for b in 0..nb {
            let s = trace.sigma_at(t, b);
            all.push(s);
            if voiced {
                voiced_sum += s;
                voiced_n += 1;
            }
        }
    }
    let mean = all.iter().sum::<f64>() / all.len().max(1) as f64;
    all.sort_by(f64::total_cmp);
    let nll = trace.mean_nll();
    Ok(UtteranceEval {
        nll_nats: nll,
        nll_bits: nll / std::f64::consts::LN_2,
        steps: trace.steps(),
        sigma_mean: mean,
        sigma_p50: percentile(&all, 0.5),
        sigma_p90: percentile(&all, 0.9),
        sigma_voiced_mean: (voiced_n > 0).then(|| voiced_sum / voiced_n as f64),
        voiced_steps: voiced_n / nb,
    })
}
