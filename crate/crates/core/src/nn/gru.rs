use rand::Rng;

use super::layers::{sigmoid, Module, WeightMatrix};
use super::tensor::Parameter;
use crate::error::{Error, Result};

const GATES: [&str; 3] = ["z", "r", "h"];

/// Standard GRU cell. Gate order everywhere is update `z`, reset `r`,
/// candidate `h`. Each gate has an input matrix and a recurrent matrix,
/// either of which may be block-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub wx: [WeightMatrix; 3],
    pub wh: [WeightMatrix; 3],
    pub b: [Parameter; 3],
}

/// Activations saved by [`GruCell::step`] for the backward pass.
#[derive(Debug, Clone)]
pub struct GruCache {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub cand: Vec<f64>,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, hidden: usize, blocks: usize, rng: &mut R) -> Result<Self> {
        let mk = |rng: &mut R, kind: &str, cols: usize, g: usize| {
            WeightMatrix::glorot(format!("{name}.{kind}{}", GATES[g]), hidden, cols, blocks, rng)
        };
        Ok(Self {
            wx: [mk(rng, "wx", inputs, 0)?, mk(rng, "wx", inputs, 1)?, mk(rng, "wx", inputs, 2)?],
            wh: [mk(rng, "wh", hidden, 0)?, mk(rng, "wh", hidden, 1)?, mk(rng, "wh", hidden, 2)?],
            b: GATES.map(|g| Parameter::zeros(format!("{name}.b{g}"), vec![hidden])),
        })
    }

    pub fn hidden(&self) -> usize {
        self.wh[0].rows
    }

    pub fn inputs(&self) -> usize {
        self.wx[0].cols
    }

    /// Gate weight count (input and recurrent matrices, no biases).
    pub fn gate_weight_count(&self) -> usize {
        self.wx.iter().chain(&self.wh).map(|w| w.w.len()).sum()
    }

    pub fn check(&self, x: &[f64], h: &[f64]) -> Result<()> {
        if x.len() != self.inputs() || h.len() != self.hidden() {
            return Err(Error::Shape(format!(
                "gru expects input {} and state {}, got {} and {}",
                self.inputs(),
                self.hidden(),
                x.len(),
                h.len()
            )));
        }
        Ok(())
    }

    /// One step; returns the new state and the cache needed by `backward`.
    pub fn step(&self, x: &[f64], h: &[f64]) -> (Vec<f64>, GruCache) {
        let n = self.hidden();
        let gate = |g: usize, hin: &[f64]| {
            let mut a = self.b[g].values().to_vec();
            self.wx[g].matvec_acc(x, &mut a);
            self.wh[g].matvec_acc(hin, &mut a);
            a
        };
        let z: Vec<f64> = gate(0, h).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = gate(1, h).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = gate(2, &rh).into_iter().map(f64::tanh).collect();
        let out = (0..n).map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i]).collect();
        (
            out,
            GruCache {
                x: x.to_vec(),
                h: h.to_vec(),
                z,
                r,
                cand,
            },
        )
    }

    /// Accumulates parameter gradients; returns `(dx, dh_prev)`.
    pub fn backward(&mut self, c: &GruCache, dh_new: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.hidden();
        let mut dx = vec![0.0; self.inputs()];
        let mut dh: Vec<f64> = (0..n).map(|i| dh_new[i] * (1.0 - c.z[i])).collect();
        let da_z: Vec<f64> = (0..n)
            .map(|i| dh_new[i] * (c.cand[i] - c.h[i]) * c.z[i] * (1.0 - c.z[i]))
            .collect();
        let da_h: Vec<f64> = (0..n)
            .map(|i| dh_new[i] * c.z[i] * (1.0 - c.cand[i] * c.cand[i]))
            .collect();

        let rh: Vec<f64> = c.r.iter().zip(&c.h).map(|(a, b)| a * b).collect();
        let mut drh = vec![0.0; n];
        self.wx[2].backward(&c.x, &da_h, Some(&mut dx));
        self.wh[2].backward(&rh, &da_h, Some(&mut drh));
        let mut da_r = vec![0.0; n];
        for i in 0..n {
            dh[i] += drh[i] * c.r[i];
            da_r[i] = drh[i] * c.h[i] * c.r[i] * (1.0 - c.r[i]);
        }
        for (g, da) in [(0usize, &da_z), (1, &da_r)] {
            self.wx[g].backward(&c.x, da, Some(&mut dx));
            self.wh[g].backward(&c.h, da, Some(&mut dh));
        }
        for (g, da) in [(0usize, &da_z), (1, &da_r), (2, &da_h)] {
            for (acc, d) in self.b[g].grad.iter_mut().zip(da.iter()) {
                *acc += d;
            }
        }
        (dx, dh)
    }
}

impl Module for GruCell {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.wx.iter().chain(&self.wh).for_each(|w| f(&w.w));
        self.b.iter().for_each(|b| f(b));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.wx.iter_mut().chain(self.wh.iter_mut()).for_each(|w| f(&mut w.w));
        self.b.iter_mut().for_each(|b| f(b));
    }
}
