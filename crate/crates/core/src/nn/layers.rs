use rand::Rng;

use super::tensor::Parameter;
use crate::error::{Error, Result};

/// Anything that owns parameters.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&Parameter));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.len());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }
}

/// Matrix that is either dense (`blocks == 1`) or block-diagonal with equal
/// square-or-rectangular blocks. Stored as `blocks x (rows/blocks) x (cols/blocks)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub rows: usize,
    pub cols: usize,
    pub blocks: usize,
    pub w: Parameter,
}

impl WeightMatrix {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize, blocks: usize) -> Result<Self> {
        if blocks == 0 || rows % blocks != 0 || cols % blocks != 0 {
            return Err(Error::Shape(format!("{rows}x{cols} is not divisible into {blocks} blocks")));
        }
        let (br, bc) = (rows / blocks, cols / blocks);
        Ok(Self {
            rows,
            cols,
            blocks,
            w: Parameter::zeros(name, vec![blocks, br, bc]),
        })
    }

    pub fn glorot<R: Rng + ?Sized>(name: impl Into<String>, rows: usize, cols: usize, blocks: usize, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(name, rows, cols, blocks)?;
        let (br, bc) = (rows / blocks, cols / blocks);
        m.w = Parameter::glorot(m.w.name.clone(), vec![blocks, br, bc], bc, br, rng);
        Ok(m)
    }

    fn block_dims(&self) -> (usize, usize) {
        (self.rows / self.blocks, self.cols / self.blocks)
    }

    /// `y += W x`
    pub fn matvec_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        let (br, bc) = self.block_dims();
        let w = self.w.values();
        for b in 0..self.blocks {
            let xb = &x[b * bc..(b + 1) * bc];
            for r in 0..br {
                let row = &w[(b * br + r) * bc..(b * br + r + 1) * bc];
                y[b * br + r] += row.iter().zip(xb).map(|(a, c)| a * c).sum::<f64>();
            }
        }
    }

    /// Accumulates `dW += dy x^T` and, if given, `dx += W^T dy`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        let (br, bc) = self.block_dims();
        {
            let g = &mut self.w.grad;
            for b in 0..self.blocks {
                let xb = &x[b * bc..(b + 1) * bc];
                for r in 0..br {
                    let d = dy[b * br + r];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut g[(b * br + r) * bc..(b * br + r + 1) * bc];
                    for (gi, xi) in row.iter_mut().zip(xb) {
                        *gi += d * xi;
                    }
                }
            }
        }
        if let Some(dx) = dx {
            let w = self.w.values();
            for b in 0..self.blocks {
                let dxb = &mut dx[b * bc..(b + 1) * bc];
                for r in 0..br {
                    let d = dy[b * br + r];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &w[(b * br + r) * bc..(b * br + r + 1) * bc];
                    for (o, wi) in dxb.iter_mut().zip(row) {
                        *o += d * wi;
                    }
                }
            }
        }
    }

    /// Row-major dense equivalent.
    pub fn to_dense(&self) -> Vec<f64> {
        let (br, bc) = self.block_dims();
        let mut out = vec![0.0; self.rows * self.cols];
        let w = self.w.values();
        for b in 0..self.blocks {
            for r in 0..br {
                for c in 0..bc {
                    out[(b * br + r) * self.cols + b * bc + c] = w[(b * br + r) * bc + c];
                }
            }
        }
        out
    }
}

impl Module for WeightMatrix {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.w)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.w)
    }
}

/// `y = W x + b`
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: WeightMatrix,
    pub b: Parameter,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, blocks: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            w: WeightMatrix::glorot(format!("{name}.w"), outputs, inputs, blocks, rng)?,
            b: Parameter::zeros(format!("{name}.b"), vec![outputs]),
        })
    }

    pub fn inputs(&self) -> usize {
        self.w.cols
    }

    pub fn outputs(&self) -> usize {
        self.w.rows
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs() {
            return Err(Error::Shape(format!("dense expects {} inputs, got {}", self.inputs(), x.len())));
        }
        let mut y = self.b.values().to_vec();
        self.w.matvec_acc(x, &mut y);
        Ok(y)
    }

    pub fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(self.b.values());
        self.w.matvec_acc(x, y);
    }

    /// Accumulates parameter gradients and `dx += W^T dy`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        for (g, d) in self.b.grad.iter_mut().zip(dy) {
            *g += d;
        }
        self.w.backward(x, dy, dx);
    }
}

impl Module for Dense {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.w.w);
        f(&self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.w.w);
        f(&mut self.b);
    }
}

/// Sequence of per-time vectors.
pub type Sequence = Vec<Vec<f64>>;

/// 1-d convolution with explicit tap offsets and zero padding outside the
/// sequence: `y[t] = b + sum_j W_j x[t + offset_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub offsets: Vec<isize>,
    pub taps: Vec<WeightMatrix>,
    pub b: Parameter,
}

impl Conv1d {
    pub fn with_offsets<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, offsets: Vec<isize>, rng: &mut R) -> Result<Self> {
        let fan_in = inputs * offsets.len();
        let taps = (0..offsets.len())
            .map(|j| {
                let mut m = WeightMatrix::zeros(format!("{name}.w{j}"), outputs, inputs, 1)?;
                m.w = Parameter::glorot(m.w.name.clone(), vec![1, outputs, inputs], fan_in, outputs, rng);
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            offsets,
            taps,
            b: Parameter::zeros(format!("{name}.b"), vec![outputs]),
        })
    }

    /// Kernel-2 causal conv: `y[t] = W0 x[t-d] + W1 x[t] + b`.
    pub fn causal<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, dilation: usize, rng: &mut R) -> Result<Self> {
        if dilation == 0 {
            return Err(Error::Config("dilation must be at least 1".into()));
        }
        Self::with_offsets(name, inputs, outputs, vec![-(dilation as isize), 0], rng)
    }

    /// Kernel-3 centered conv seeing frames `t-1, t, t+1`.
    pub fn centered<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        Self::with_offsets(name, inputs, outputs, vec![-1, 0, 1], rng)
    }

    pub fn inputs(&self) -> usize {
        self.taps[0].cols
    }

    pub fn outputs(&self) -> usize {
        self.taps[0].rows
    }

    fn source(t: usize, off: isize, len: usize) -> Option<usize> {
        let s = t as isize + off;
        (s >= 0 && (s as usize) < len).then_some(s as usize)
    }

    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<Sequence> {
        if xs.iter().any(|x| x.len() != self.inputs()) {
            return Err(Error::Shape(format!("conv expects {} channels", self.inputs())));
        }
        let n = xs.len();
        Ok((0..n)
            .map(|t| {
                let mut y = self.b.values().to_vec();
                for (off, w) in self.offsets.iter().zip(&self.taps) {
                    if let Some(s) = Self::source(t, *off, n) {
                        w.matvec_acc(&xs[s], &mut y);
                    }
                }
                y
            })
            .collect())
    }

    pub fn backward(&mut self, xs: &[Vec<f64>], dys: &[Vec<f64>]) -> Sequence {
        let n = xs.len();
        let mut dxs = vec![vec![0.0; self.inputs()]; n];
        for (t, dy) in dys.iter().enumerate() {
            for (g, d) in self.b.grad.iter_mut().zip(dy) {
                *g += d;
            }
            for (off, w) in self.offsets.iter().zip(self.taps.iter_mut()) {
                if let Some(s) = Self::source(t, *off, n) {
                    w.backward(&xs[s], dy, Some(&mut dxs[s]));
                }
            }
        }
        dxs
    }
}

impl Module for Conv1d {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.taps.iter().for_each(|w| f(&w.w));
        f(&self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.taps.iter_mut().for_each(|w| f(&mut w.w));
        f(&mut self.b);
    }
}

/// Kernel-2, stride-2 transpose convolution: `y[2t + j] = W_j x[t] + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransposeConv1d {
    pub taps: [WeightMatrix; 2],
    pub b: Parameter,
}

impl TransposeConv1d {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            taps: [
                WeightMatrix::glorot(format!("{name}.w0"), outputs, inputs, 1, rng)?,
                WeightMatrix::glorot(format!("{name}.w1"), outputs, inputs, 1, rng)?,
            ],
            b: Parameter::zeros(format!("{name}.b"), vec![outputs]),
        })
    }

    pub fn inputs(&self) -> usize {
        self.taps[0].cols
    }

    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<Sequence> {
        if xs.iter().any(|x| x.len() != self.inputs()) {
            return Err(Error::Shape(format!("transpose conv expects {} channels", self.inputs())));
        }
        let mut out = Vec::with_capacity(2 * xs.len());
        for x in xs {
            for w in &self.taps {
                let mut y = self.b.values().to_vec();
                w.matvec_acc(x, &mut y);
                out.push(y);
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, xs: &[Vec<f64>], dys: &[Vec<f64>]) -> Sequence {
        let mut dxs = vec![vec![0.0; self.inputs()]; xs.len()];
        for (t, x) in xs.iter().enumerate() {
            for j in 0..2 {
                let dy = &dys[2 * t + j];
                for (g, d) in self.b.grad.iter_mut().zip(dy) {
                    *g += d;
                }
                self.taps[j].backward(x, dy, Some(&mut dxs[t]));
            }
        }
        dxs
    }
}

impl Module for TransposeConv1d {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.taps.iter().for_each(|w| f(&w.w));
        f(&self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.taps.iter_mut().for_each(|w| f(&mut w.w));
        f(&mut self.b);
    }
}

pub fn tanh_seq(xs: &mut Sequence) {
    xs.iter_mut().flatten().for_each(|v| *v = v.tanh());
}

/// Backpropagates through `y = tanh(x)` given the outputs `y`.
pub fn tanh_backward_seq(ys: &[Vec<f64>], dys: &mut Sequence) {
    for (y, dy) in ys.iter().zip(dys.iter_mut()) {
        for (yi, di) in y.iter().zip(dy.iter_mut()) {
            *di *= 1.0 - yi * yi;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
