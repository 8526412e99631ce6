//! Generative low-rate speech codec: mel analysis, transform quantization,
//! multi-band WaveGRU synthesis with mixture-of-logistics outputs.

pub mod audio;
pub(crate) mod binio;
pub mod config;
pub mod error;
pub mod features;
pub mod filterbank;
pub mod model;
pub mod mol;
pub mod nn;
pub mod quant;
pub mod train;

pub use error::{Error, Result};
