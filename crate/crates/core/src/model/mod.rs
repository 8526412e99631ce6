//! Conditioning stack and multi-band WaveGRU.

mod cond;
mod wavegru;

pub use cond::{CondCache, ConditioningStack, DILATIONS, LEFT_CONTEXT, LOOKAHEAD, UPSAMPLE};
pub use wavegru::{EvalTrace, LossConfig, LossTerms, ModelConfig, Segment, WaveGruModel};
