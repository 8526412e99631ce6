use serde::{Deserialize, Serialize};

use super::layers::Module;
use super::tensor::Parameter;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Per-parameter moments live on [`Parameter`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Number of applied updates.
    pub t: u64,
    /// Number of updates skipped because a gradient was non-finite.
    pub skipped: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, t: 0, skipped: 0 }
    }

    /// Applies one update to all parameters. Returns `false` (and counts a
    /// skip) when any gradient is non-finite; nothing is modified then.
    pub fn step(&mut self, params: &mut [&mut Parameter]) -> bool {
        let finite = params.iter().all(|p| p.grad.iter().all(|g| g.is_finite()));
        if !self.begin(finite) {
            return false;
        }
        params.iter_mut().for_each(|p| self.update(p));
        true
    }

    /// [`Adam::step`] over every parameter of a module.
    pub fn step_module(&mut self, module: &mut dyn Module) -> bool {
        let mut finite = true;
        module.visit(&mut |p| finite &= p.grad.iter().all(|g| g.is_finite()));
        if !self.begin(finite) {
            return false;
        }
        module.visit_mut(&mut |p| self.update(p));
        true
    }

    fn begin(&mut self, finite: bool) -> bool {
        if !finite {
            self.skipped += 1;
            log::warn!("skipping optimizer step: non-finite gradient ({} skipped so far)", self.skipped);
            return false;
        }
        self.t += 1;
        true
    }

    fn update(&self, p: &mut Parameter) {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        let Parameter {
            value, grad, adam_m, adam_v, ..
        } = p;
        for i in 0..grad.len() {
            let g = grad[i];
            adam_m[i] = beta1 * adam_m[i] + (1.0 - beta1) * g;
            adam_v[i] = beta2 * adam_v[i] + (1.0 - beta2) * g * g;
            let mh = adam_m[i] / c1;
            let vh = adam_v[i] / c2;
            value.values[i] -= lr * mh / (vh.sqrt() + eps);
        }
        p.apply_mask();
    }
}

/// Cubic sparsity ramp for iterative magnitude pruning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruningSchedule {
    pub start_step: u64,
    pub end_step: u64,
    pub target_sparsity: f64,
    pub interval: u64,
}

impl PruningSchedule {
    pub fn full(start_step: u64, end_step: u64) -> Self {
        Self {
            start_step,
            end_step,
            target_sparsity: 0.92,
            interval: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.target_sparsity) {
            return Err(Error::Config("target sparsity must be in [0, 1]".into()));
        }
        if self.end_step < self.start_step {
            return Err(Error::Config("pruning end step precedes start step".into()));
        }
        if self.interval == 0 {
            return Err(Error::Config("pruning interval must be positive".into()));
        }
        Ok(())
    }

    pub fn sparsity_at(&self, step: u64) -> f64 {
        if step <= self.start_step {
            return 0.0;
        }
        if step >= self.end_step {
            return self.target_sparsity;
        }
        let frac = (step - self.start_step) as f64 / (self.end_step - self.start_step) as f64;
        (self.target_sparsity * (1.0 - (1.0 - frac).powi(3))).clamp(0.0, self.target_sparsity)
    }

    /// Whether the mask should be recomputed at `step`.
    pub fn is_update_step(&self, step: u64) -> bool {
        let on_grid = step > self.start_step && (step - self.start_step) % self.interval == 0;
        (on_grid && step <= self.end_step) || step == self.end_step
    }
}

/// Masks the smallest-magnitude entries of a prunable parameter so that
/// `round(s(step) * n)` entries are off. Already-masked entries are ranked
/// first, so masks only ever grow.
pub fn prune_update(param: &mut Parameter, schedule: &PruningSchedule, step: u64) {
    if !param.prunable {
        return;
    }
    let n = param.len();
    let want = (schedule.sparsity_at(step) * n as f64).round() as usize;
    let prev = param.mask.take().unwrap_or_else(|| vec![false; n]);
    let have = prev.iter().filter(|&&b| b).count();
    if want <= have {
        param.mask = Some(prev);
        param.apply_mask();
        return;
    }
    let vals = param.values();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        prev[b]
            .cmp(&prev[a])
            .then(vals[a].abs().total_cmp(&vals[b].abs()))
            .then(a.cmp(&b))
    });
    let mut mask = prev;
    for &i in &order[..want] {
        mask[i] = true;
    }
    param.mask = Some(mask);
    param.apply_mask();
}
