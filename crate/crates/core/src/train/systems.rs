use std::fmt;

use serde::{Deserialize, Serialize};

/// Attributes distinguishing the compared systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SystemFlags {
    pub var_reg: bool,
    /// Inputs were cleaned by an external denoiser before encoding.
    pub denoised_input: bool,
    pub quantized: bool,
    pub pruned: bool,
}

/// A named system wiring the four attributes into training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemPreset {
    pub label: String,
    pub flags: SystemFlags,
    /// Variance-regularization weight.
    pub nu: f64,
    /// Condition on quantized mel frames.
    pub quantized_conditioning: bool,
    /// Enable magnitude pruning and block-diagonal GRU gates.
    pub prune: bool,
    pub gru_blocks: usize,
    /// Consume the manifest's noise column. Denoised systems read
    /// pre-cleaned files and skip noise mixing.
    pub use_noise: bool,
}

impl fmt::Display for SystemPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

/// Label: `q` for quantized, then `v` for variance regularization and `t`
/// for denoised input; `b` when neither `v` nor `t` applies to an
/// unquantized system.
pub fn build_system_matrix(flags: SystemFlags, toy_nu: f64) -> SystemPreset {
    let mut label = String::new();
    if flags.quantized {
        label.push('q');
    }
    if flags.var_reg {
        label.push('v');
    }
    if flags.denoised_input {
        label.push('t');
    }
    if label.is_empty() {
        label.push('b');
    }
    SystemPreset {
        label,
        flags,
        nu: if flags.var_reg { toy_nu } else { 0.0 },
        quantized_conditioning: flags.quantized,
        prune: flags.pruned,
        gru_blocks: if flags.pruned { 16 } else { 1 },
        use_noise: !flags.denoised_input,
    }
}

/// The eight compared systems in their customary order.
pub fn all_systems(toy_nu: f64) -> Vec<SystemPreset> {
    let mut out = Vec::new();
    for q in [false, true] {
        for (v, t) in [(false, false), (true, false), (false, true), (true, true)] {
            out.push(build_system_matrix(
                SystemFlags {
                    var_reg: v,
                    denoised_input: t,
                    quantized: q,
                    pruned: q,
                },
                toy_nu,
            ));
        }
    }
    out
}
