use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", values.len())));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A trainable tensor with its gradient accumulator, optional pruning mask
/// and Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    /// `true` marks a pruned entry, held at exactly zero.
    pub mask: Option<Vec<bool>>,
    /// Whether magnitude pruning may touch this parameter.
    pub prunable: bool,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let n = value.len();
        Self {
            name: name.into(),
            value,
            grad: vec![0.0; n],
            mask: None,
            prunable: false,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng + ?Sized>(name: impl Into<String>, shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
        Self::new(name, Tensor { shape, values })
    }

    pub fn prunable(mut self) -> Self {
        self.prunable = true;
        self
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.value.values
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn masked_count(&self) -> usize {
        self.mask.as_ref().map_or(0, |m| m.iter().filter(|&&b| b).count())
    }

    /// Forces masked entries (value and moments) to zero.
    pub fn apply_mask(&mut self) {
        if let Some(mask) = &self.mask {
            for (i, &off) in mask.iter().enumerate() {
                if off {
                    self.value.values[i] = 0.0;
                    self.adam_m[i] = 0.0;
                    self.adam_v[i] = 0.0;
                }
            }
        }
    }
}
