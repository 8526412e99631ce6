//! Subcommand implementations for the `lvrc` binary.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lvrc::audio::{load_wav, save_wav, AudioBuffer};
use lvrc::config::{hex, CodecConfig};
use lvrc::features::MelAnalyzer;
use lvrc::filterbank::delay_compensated_snr_db;
use lvrc::model::WaveGruModel;
use lvrc::nn::Checkpoint;
use lvrc::quant::{log_spectral_distortion_db, Bitstream, QuantizerModel};
use lvrc::train::{
    build_system_matrix, evaluate_utterance, load_training_set, write_synthetic_dataset, DatasetManifest, Split, SynthSpec,
    SystemFlags, Trainer,
};
use lvrc::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "lvrc", version, about = "Low-rate generative speech codec")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a preset configuration file.
    InitConfig {
        #[arg(long, default_value = "toy")]
        preset: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic tone corpus and its manifest.
    Synth(SynthArgs),
    /// Fit the KLT and split-VQ codebooks.
    FitQuantizer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a WaveGRU decoder.
    Train(TrainArgs),
    /// Encode a WAV file to a bitstream.
    Encode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        quantizer: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Decode a bitstream to a WAV file.
    Decode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        quantizer: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        input: PathBuf,
        output: PathBuf,
    },
    /// Write a per-utterance evaluation report.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Condition on quantized features and report quantizer distortion.
        #[arg(long)]
        quantizer: Option<PathBuf>,
        report: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8000)]
    pub sample_rate: u32,
    #[arg(long, default_value_t = 16)]
    pub train: usize,
    #[arg(long, default_value_t = 4)]
    pub dev: usize,
    #[arg(long, default_value_t = 1.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write a noise file referenced by the training entries.
    #[arg(long)]
    pub noise: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for checkpoints and metrics.
    #[arg(long)]
    pub out: PathBuf,
    /// Condition on features passed through this quantizer.
    #[arg(long)]
    pub quantizer: Option<PathBuf>,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Override `[train] steps`.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Override `[train] seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Apply a system preset (b, v, t, vt, q, qv, qt, qvt).
    #[arg(long)]
    pub system: Option<String>,
}

/// Failure carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Format(_) | Error::Version(_) | Error::Framing(_) | Error::Shape(_) => EXIT_FORMAT,
            Error::Numeric(_) => EXIT_NUMERIC,
            Error::Io(_) | Error::Config(_) => EXIT_USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self {
            code: EXIT_USAGE,
            message: format!("report: {e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::InitConfig { preset, out } => {
            CodecConfig::preset(&preset)?.save(&out)?;
            println!("wrote {preset} config to {}", out.display());
            Ok(())
        }
        Command::Synth(args) => cmd_synth(&args),
        Command::FitQuantizer { config, manifest, out } => cmd_fit_quantizer(&config, &manifest, &out),
        Command::Train(args) => cmd_train(&args),
        Command::Encode {
            config,
            quantizer,
            input,
            output,
        } => cmd_encode(&config, &quantizer, &input, &output),
        Command::Decode {
            config,
            quantizer,
            model,
            seed,
            input,
            output,
        } => cmd_decode(&config, &quantizer, &model, &input, &output, seed),
        Command::Eval {
            config,
            model,
            manifest,
            quantizer,
            report,
        } => cmd_eval(&config, &model, &manifest, quantizer.as_deref(), &report),
    }
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let spec = SynthSpec {
        sample_rate: a.sample_rate,
        n_train: a.train,
        n_dev: a.dev,
        seconds: a.seconds,
        seed: a.seed,
        with_noise: a.noise,
    };
    let path = write_synthetic_dataset(&a.out, &spec)?;
    println!("wrote {} utterances; manifest {}", a.train + a.dev, path.display());
    Ok(())
}

pub fn load_quantizer(path: &Path, cfg: &CodecConfig) -> CliResult<QuantizerModel> {
    let q = QuantizerModel::load(path)?;
    if q.digest != cfg.quantizer_digest() {
        return Err(Error::Version(format!(
            "quantizer {} was fitted under config {} but the config digest is {}",
            path.display(),
            hex(&q.digest),
            hex(&cfg.quantizer_digest())
        ))
        .into());
    }
    Ok(q)
}

pub fn load_model(path: &Path, cfg: &CodecConfig) -> CliResult<WaveGruModel> {
    let ck = Checkpoint::load(path)?;
    if ck.digest != cfg.model_digest() {
        return Err(Error::Version(format!(
            "checkpoint {} does not match the config (digest {} vs {})",
            path.display(),
            hex(&ck.digest),
            hex(&cfg.model_digest())
        ))
        .into());
    }
    let mut model = WaveGruModel::new(cfg.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    ck.restore_into(&mut model)?;
    Ok(model)
}

fn load_audio(path: &Path, cfg: &CodecConfig) -> CliResult<AudioBuffer> {
    let audio = load_wav(path)?;
    if audio.sample_rate != cfg.features.sample_rate {
        return Err(usage(format!(
            "{} is sampled at {} Hz but the config expects {} Hz",
            path.display(),
            audio.sample_rate,
            cfg.features.sample_rate
        )));
    }
    Ok(audio)
}

fn cmd_fit_quantizer(config: &Path, manifest: &Path, out: &Path) -> CliResult<()> {
    let cfg = CodecConfig::load(config)?;
    let manifest = DatasetManifest::load(manifest)?;
    let analyzer = MelAnalyzer::new(&cfg.features)?;
    let mut utterances = Vec::new();
    for e in manifest.split(Split::Train) {
        utterances.push(analyzer.process(&load_audio(&e.clean, &cfg)?)?);
    }
    let q = QuantizerModel::fit(&utterances, &cfg.quantizer, cfg.quantizer_digest())
        .map_err(|e| usage(format!("insufficient data to fit the quantizer: {e}")))?;
    q.save(out)?;
    let coded = q.vq.allocations.iter().filter(|&&b| b > 0).count() * q.vq.split_dim;
    println!(
        "eigenvalue mass captured by the {coded} coded dimensions: {:.2}%",
        100.0 * q.klt.energy_captured(coded)
    );
    println!("split  bits");
    for (i, b) in q.vq.allocations.iter().enumerate().filter(|(_, &b)| b > 0) {
        println!("{i:>5}  {b:>4}");
    }
    println!("total = {} bits per supervector", q.bits_per_supervector());
    if q.klt.rank_deficient {
        log::warn!("feature covariance is rank deficient");
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let mut cfg = CodecConfig::load(&a.config)?;
    if let Some(steps) = a.steps {
        cfg.train.steps = steps;
    }
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    let mut use_noise = true;
    if let Some(label) = &a.system {
        let flags = SystemFlags {
            var_reg: label.contains('v'),
            denoised_input: label.contains('t'),
            quantized: label.starts_with('q'),
            pruned: label.starts_with('q'),
        };
        let preset = build_system_matrix(flags, cfg.train.nu);
        if preset.label != *label {
            return Err(usage(format!("unknown system {label:?}")));
        }
        if preset.quantized_conditioning && a.quantizer.is_none() {
            return Err(usage(format!("system {label} needs --quantizer")));
        }
        cfg.train.nu = preset.nu;
        cfg.train.prune = preset.prune;
        cfg.model.gru_blocks = preset.gru_blocks;
        use_noise = preset.use_noise;
    }
    cfg.validate()?;
    let quantizer = a.quantizer.as_deref().map(|p| load_quantizer(p, &cfg)).transpose()?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let mut data = load_training_set(&manifest, cfg.features.sample_rate)?;
    if !use_noise {
        data.iter_mut().for_each(|u| u.noise = None);
    }
    let mut trainer = Trainer::new(
        cfg.model.clone(),
        &cfg.features,
        cfg.train.clone(),
        data,
        quantizer.as_ref(),
        cfg.model_digest(),
    )?;
    if let Some(path) = &a.resume {
        trainer.resume(&Checkpoint::load(path)?)?;
    }
    let history = trainer.run(Some(&a.out))?;
    if let Some(last) = history.last() {
        println!(
            "step {}: nll {:.4} jvar {:.4} sigma {:.5} sparsity {:.3}",
            last.step, last.terms.nll, last.terms.jvar, last.terms.sigma_mean, last.sparsity
        );
    }
    println!("final checkpoint {}", a.out.join("final.lvrw").display());
    Ok(())
}

fn cmd_encode(config: &Path, quantizer: &Path, input: &Path, output: &Path) -> CliResult<()> {
    let cfg = CodecConfig::load(config)?;
    let q = load_quantizer(quantizer, &cfg)?;
    let audio = load_audio(input, &cfg)?;
    let frames = MelAnalyzer::new(&cfg.features)?.process(&audio)?;
    let bs = q.encode(&frames)?;
    bs.save(output)?;
    let bits = bs.payload_bits(q.bits_per_supervector());
    let secs = audio.duration_secs();
    if secs > 0.0 {
        println!("{} payload bits, {} b/s", bits, (bits as f64 / secs).round());
    } else {
        println!("{bits} payload bits, 0 b/s (empty input)");
    }
    Ok(())
}

fn cmd_decode(config: &Path, quantizer: &Path, model: &Path, input: &Path, output: &Path, seed: u64) -> CliResult<()> {
    let cfg = CodecConfig::load(config)?;
    let q = load_quantizer(quantizer, &cfg)?;
    let model = load_model(model, &cfg)?;
    let bs = Bitstream::load(input)?;
    if bs.digest != q.digest {
        return Err(Error::Version("bitstream was produced under a different configuration".into()).into());
    }
    let frames = q.decode(&bs)?;
    let audio = if frames.is_empty() {
        AudioBuffer::silence(0, cfg.model.sample_rate)
    } else {
        let mels: Vec<Vec<f64>> = frames.into_iter().map(|f| f.values).collect();
        let seconds = (mels.len() * cfg.features.hop_len()) as f64 / cfg.features.sample_rate as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.generate(&mels, seconds, &mut rng)?
    };
    if audio.samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("generated audio is not finite".into()).into());
    }
    save_wav(output, &audio)?;
    println!("decoded {:.3} s to {}", audio.duration_secs(), output.display());
    Ok(())
}

pub const REPORT_HEADER: [&str; 12] = [
    "utterance",
    "split",
    "status",
    "nll_nats",
    "nll_bits",
    "sigma_mean",
    "sigma_p50",
    "sigma_p90",
    "sigma_voiced_mean",
    "voiced_steps",
    "quantizer_lsd_db",
    "filterbank_snr_db",
];

fn cmd_eval(config: &Path, model: &Path, manifest: &Path, quantizer: Option<&Path>, report: &Path) -> CliResult<()> {
    let cfg = CodecConfig::load(config)?;
    let model = load_model(model, &cfg)?;
    let q = quantizer.map(|p| load_quantizer(p, &cfg)).transpose()?;
    let manifest = DatasetManifest::load(manifest)?;
    let analyzer = MelAnalyzer::new(&cfg.features)?;
    let reg_bands = cfg.train.reg_bands;
    let mut w = csv::Writer::from_path(report)?;
    w.write_record(REPORT_HEADER)?;
    let mut missing = Vec::new();
    let fmt = |v: f64| format!("{v:.6}");
    for e in &manifest.entries {
        let name = e.clean.display().to_string();
        let split = e.split.to_string();
        if !e.clean.exists() {
            missing.push(name.clone());
            let mut row = vec![name, split, "missing".to_string()];
            row.resize(REPORT_HEADER.len(), String::new());
            w.write_record(&row)?;
            continue;
        }
        let audio = load_audio(&e.clean, &cfg)?;
        let ev = evaluate_utterance(&model, &analyzer, &audio, q.as_ref(), reg_bands)?;
        let lsd = match &q {
            Some(q) => {
                let frames = analyzer.process(&audio)?;
                let coded = q.quantize_frames(&frames)?;
                fmt(log_spectral_distortion_db(&frames[..coded.len()], &coded))
            }
            None => String::new(),
        };
        let fb = model.filterbank();
        let bands = fb.analyze(&audio.samples, audio.sample_rate as f64);
        let back = fb.synthesize(&bands)?;
        let snr = delay_compensated_snr_db(&audio.samples, &back, fb.group_delay());
        w.write_record([
            name,
            split,
            "ok".to_string(),
            fmt(ev.nll_nats),
            fmt(ev.nll_bits),
            fmt(ev.sigma_mean),
            fmt(ev.sigma_p50),
            fmt(ev.sigma_p90),
            ev.sigma_voiced_mean.map(fmt).unwrap_or_default(),
            ev.voiced_steps.to_string(),
            lsd,
            fmt(snr),
        ])?;
    }
    w.flush()?;
    if !missing.is_empty() {
        for m in &missing {
            eprintln!("missing: {m}");
        }
        return Err(usage(format!(
            "{} file(s) missing; partial report written to {}",
            missing.len(),
            report.display()
        )));
    }
    println!("wrote {} rows to {}", manifest.entries.len(), report.display());
    Ok(())
}
