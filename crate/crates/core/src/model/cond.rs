use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{tanh_backward_seq, tanh_seq, Conv1d, Dense, Module, Parameter, Sequence, TransposeConv1d};

/// Causal conv dilations after the input layer.
pub const DILATIONS: [usize; 3] = [1, 2, 4];
/// Time expansion of the three stride-2 transpose convs.
pub const UPSAMPLE: usize = 8;
/// Frames of left context that make a windowed evaluation exact: one for the
/// input layer plus the summed causal dilations.
pub const LEFT_CONTEXT: usize = 1 + 1 + 2 + 4;
/// Frames of lookahead of the centered input layer.
pub const LOOKAHEAD: usize = 1;

/// Mel frames to conditioning vectors at `UPSAMPLE` times the frame rate.
/// Every layer except the final projection is followed by `tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningStack {
    pub input: Conv1d,
    pub causal: Vec<Conv1d>,
    pub upsample: Vec<TransposeConv1d>,
    pub proj: Dense,
}

/// Activations kept for the backward pass. `acts[0]` is the input, then one
/// entry per `tanh` layer.
#[derive(Debug, Clone)]
pub struct CondCache {
    acts: Vec<Sequence>,
}

impl ConditioningStack {
    pub fn new<R: Rng + ?Sized>(n_mels: usize, channels: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        let input = Conv1d::centered("cond.in", n_mels, channels, rng)?;
        let causal = DILATIONS
            .iter()
            .enumerate()
            .map(|(i, &d)| Conv1d::causal(&format!("cond.causal{i}"), channels, channels, d, rng))
            .collect::<Result<Vec<_>>>()?;
        let upsample = (0..3)
            .map(|i| TransposeConv1d::new(&format!("cond.up{i}"), channels, channels, rng))
            .collect::<Result<Vec<_>>>()?;
        let proj = Dense::new("cond.proj", channels, out_dim, 1, rng)?;
        let mut stack = Self {
            input,
            causal,
            upsample,
            proj,
        };
        stack.visit_mut(&mut |p| {
            if p.value.shape.len() > 1 {
                p.prunable = true;
            }
        });
        Ok(stack)
    }

    pub fn n_mels(&self) -> usize {
        self.input.inputs()
    }

    pub fn out_dim(&self) -> usize {
        self.proj.outputs()
    }

    pub fn forward(&self, mels: &[Vec<f64>]) -> Result<(Sequence, CondCache)> {
        if mels.is_empty() {
            return Err(Error::Shape("conditioning needs at least one frame".into()));
        }
        let mut acts = vec![mels.to_vec()];
        let mut cur = self.input.forward(mels)?;
        tanh_seq(&mut cur);
        acts.push(cur);
        for conv in &self.causal {
            let mut y = conv.forward(acts.last().unwrap())?;
            tanh_seq(&mut y);
            acts.push(y);
        }
        for up in &self.upsample {
            let mut y = up.forward(acts.last().unwrap())?;
            tanh_seq(&mut y);
            acts.push(y);
        }
        let out = acts
            .last()
            .unwrap()
            .iter()
            .map(|v| self.proj.forward(v))
            .collect::<Result<Vec<_>>>()?;
        Ok((out, CondCache { acts }))
    }

    /// Backpropagates `d_out` (one gradient per output vector) into the
    /// parameter accumulators.
    pub fn backward(&mut self, cache: &CondCache, d_out: &[Vec<f64>]) {
        let acts = &cache.acts;
        let top = acts.last().unwrap();
        let mut d: Sequence = vec![vec![0.0; top[0].len()]; top.len()];
        for ((x, dy), dx) in top.iter().zip(d_out).zip(d.iter_mut()) {
            if dy.iter().any(|&v| v != 0.0) {
                self.proj.backward(x, dy, Some(dx));
            }
        }
        let n = acts.len();
        for (i, up) in self.upsample.iter_mut().enumerate().rev() {
            let layer = n - 3 + i;
            tanh_backward_seq(&acts[layer], &mut d);
            d = up.backward(&acts[layer - 1], &d);
        }
        for (i, conv) in self.causal.iter_mut().enumerate().rev() {
            let layer = 2 + i;
            tanh_backward_seq(&acts[layer], &mut d);
            d = conv.backward(&acts[layer - 1], &d);
        }
        tanh_backward_seq(&acts[1], &mut d);
        self.input.backward(&acts[0], &d);
    }
}

impl Module for ConditioningStack {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.input.visit(f);
        self.causal.iter().for_each(|c| c.visit(f));
        self.upsample.iter().for_each(|u| u.visit(f));
        self.proj.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.input.visit_mut(f);
        self.causal.iter_mut().for_each(|c| c.visit_mut(f));
        self.upsample.iter_mut().for_each(|u| u.visit_mut(f));
        self.proj.visit_mut(f);
    }
}
