//! Data pipeline, training loop, evaluation and system presets.

mod data;
mod eval;
mod signal;
mod systems;
mod trainer;

pub use data::{synth_utterance, write_synthetic_dataset, DatasetManifest, ManifestEntry, Split, SynthSpec};
pub use eval::{evaluate_utterance, UtteranceEval, VOICED_THRESHOLD};
pub use signal::{frame_voicing, mix_noise, voicing_score, PITCH_MAX_HZ, PITCH_MIN_HZ, SILENCE_RMS};
pub use systems::{all_systems, build_system_matrix, SystemFlags, SystemPreset};
pub use trainer::{
    checkpoint_path, load_training_set, prepare, Prepared, RegularizerKind, StepMetrics, TrainConfig, Trainer, Utterance,
    METRICS_HEADER,
};
