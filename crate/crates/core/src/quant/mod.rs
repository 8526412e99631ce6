//! Supervector KLT + split-VQ quantizer and the `LVRC` bitstream.
//!
//! Encoding stacks log mel frames into supervectors, rotates them into the
//! KLT domain, and codes consecutive coefficient pairs with per-split
//! codebooks. Only codebook indices are transmitted.

pub mod alloc;
pub mod bitio;
pub mod klt;
pub mod supervector;
pub mod vq;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::features::MelFrame;

pub use alloc::allocate_bits;
pub use bitio::{BitReader, BitWriter};
pub use klt::{fit_klt, KltModel};
pub use supervector::{stack_supervectors, unstack_supervectors, Supervector};
pub use vq::{fit_codebooks, kmeans, KMeansOptions, SplitVqModel};

pub const BITSTREAM_MAGIC: &[u8; 4] = b"LVRC";
pub const BITSTREAM_VERSION: u8 = 1;
const MODEL_MAGIC: &[u8; 4] = b"LVRQ";
const MODEL_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerConfig {
    /// Log mel frames per supervector.
    pub stack: usize,
    pub split_dim: usize,
    pub total_bits: usize,
    #[serde(default = "default_max_bits")]
    pub max_bits_per_split: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_kmeans_iters")]
    pub kmeans_iters: usize,
}

fn default_max_bits() -> usize {
    8
}

fn default_kmeans_iters() -> usize {
    50
}

impl QuantizerConfig {
    /// 2 frames per supervector, 2-d splits, 120 bits (3 kb/s at 50 Hz frames).
    pub fn full() -> Self {
        Self {
            stack: 2,
            split_dim: 2,
            total_bits: 120,
            max_bits_per_split: default_max_bits(),
            seed: 0,
            kmeans_iters: default_kmeans_iters(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stack == 0 || self.split_dim == 0 {
            return Err(Error::Config("stack and split_dim must be positive".into()));
        }
        if self.max_bits_per_split > 16 {
            return Err(Error::Config("max_bits_per_split must be <= 16".into()));
        }
        Ok(())
    }
}

/// Header plus packed index payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Bitstream {
    pub digest: [u8; 8],
    /// Number of supervectors.
    pub frame_count: u32,
    pub payload: Vec<u8>,
}

impl Bitstream {
    pub const HEADER_LEN: usize = 4 + 1 + 8 + 4;

    pub fn payload_bits(&self, bits_per_supervector: usize) -> usize {
        self.frame_count as usize * bits_per_supervector
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(BITSTREAM_MAGIC);
        w.u8(BITSTREAM_VERSION);
        w.bytes(&self.digest);
        w.u32(self.frame_count);
        w.bytes(&self.payload);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "bitstream");
        r.expect_magic(BITSTREAM_MAGIC)?;
        let version = r.u8()?;
        if version != BITSTREAM_VERSION {
            return Err(Error::Version(format!("unsupported bitstream version {version}")));
        }
        let digest = r.digest()?;
        let frame_count = r.u32()?;
        Ok(Self {
            digest,
            frame_count,
            payload: r.remaining().to_vec(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Fitted KLT and split-VQ codebooks bound to a configuration digest.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerModel {
    pub digest: [u8; 8],
    pub seed: u64,
    pub stack: usize,
    pub n_mels: usize,
    pub klt: KltModel,
    pub vq: SplitVqModel,
}

impl QuantizerModel {
    /// Fits on per-utterance frame sequences; supervectors never straddle
    /// utterances.
    pub fn fit(utterances: &[Vec<MelFrame>], cfg: &QuantizerConfig, digest: [u8; 8]) -> Result<Self> {
        cfg.validate()?;
        let svs: Vec<Vec<f64>> = utterances
            .iter()
            .flat_map(|u| stack_supervectors(u, cfg.stack))
            .map(|s| s.values)
            .collect();
        if svs.is_empty() {
            return Err(Error::Config("no complete supervectors in training data".into()));
        }
        let n_mels = svs[0].len() / cfg.stack;
        let klt = fit_klt(&svs)?;
        let allocations = allocate_bits(&klt.eigenvalues, cfg.split_dim, cfg.total_bits, cfg.max_bits_per_split)?;
        let coeffs: Vec<Vec<f64>> = svs.iter().map(|v| klt.apply(v)).collect::<Result<_>>()?;
        let opts = KMeansOptions {
            max_iters: cfg.kmeans_iters,
            seed: cfg.seed,
            ..KMeansOptions::default()
        };
        let vq = fit_codebooks(&coeffs, &allocations, cfg.split_dim, &opts)?;
        Ok(Self {
            digest,
            seed: cfg.seed,
            stack: cfg.stack,
            n_mels,
            klt,
            vq,
        })
    }

    pub fn bits_per_supervector(&self) -> usize {
        self.vq.bits_per_vector()
    }

    fn check_frames(&self, frames: &[MelFrame]) -> Result<()> {
        match frames.iter().find(|f| f.values.len() != self.n_mels) {
            Some(f) => Err(Error::Shape(format!(
                "frame has {} mel values, quantizer expects {}",
                f.values.len(),
                self.n_mels
            ))),
            None => Ok(()),
        }
    }

    /// Split indices for each complete supervector.
    pub fn encode_indices(&self, frames: &[MelFrame]) -> Result<Vec<Vec<u32>>> {
        self.check_frames(frames)?;
        stack_supervectors(frames, self.stack)
            .iter()
            .map(|sv| Ok(self.vq.quantize(&self.klt.apply(&sv.values)?)))
            .collect()
    }

    pub fn encode(&self, frames: &[MelFrame]) -> Result<Bitstream> {
        let indices = self.encode_indices(frames)?;
        let mut w = BitWriter::new();
        for sv in &indices {
            for (&idx, &bits) in sv.iter().zip(&self.vq.allocations) {
                w.write(idx, bits);
            }
        }
        Ok(Bitstream {
            digest: self.digest,
            frame_count: indices.len() as u32,
            payload: w.into_bytes(),
        })
    }

    pub fn reconstruct(&self, indices: &[Vec<u32>]) -> Result<Vec<MelFrame>> {
        let svs = indices
            .iter()
            .enumerate()
            .map(|(t, idx)| {
                Ok(Supervector {
                    values: self.klt.invert(&self.vq.reconstruct(idx))?,
                    time_index: t,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(unstack_supervectors(&svs, self.stack))
    }

    pub fn decode(&self, bs: &Bitstream) -> Result<Vec<MelFrame>> {
        if bs.digest != self.digest {
            return Err(Error::Version(
                "bitstream config digest does not match the quantizer".into(),
            ));
        }
        let bits = self.bits_per_supervector();
        let needed = bs.payload_bits(bits).div_ceil(8);
        if bs.payload.len() < needed {
            return Err(Error::Framing(format!(
                "payload has {} bytes, {} supervectors need {needed}",
                bs.payload.len(),
                bs.frame_count
            )));
        }
        if bs.payload.len() > needed {
            return Err(Error::Framing("unexpected bytes after payload".into()));
        }
        let mut r = BitReader::new(&bs.payload);
        let indices = (0..bs.frame_count)
            .map(|_| {
                self.vq
                    .allocations
                    .iter()
                    .map(|&b| r.read(b).ok_or_else(|| Error::Framing("payload truncated".into())))
                    .collect::<Result<Vec<u32>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        self.reconstruct(&indices)
    }

    /// Quantize-and-reconstruct without going through bytes.
    pub fn quantize_frames(&self, frames: &[MelFrame]) -> Result<Vec<MelFrame>> {
        self.reconstruct(&self.encode_indices(frames)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.klt.dim();
        let mut w = ByteWriter::default();
        w.bytes(MODEL_MAGIC);
        w.u8(MODEL_VERSION);
        w.bytes(&self.digest);
        w.u64(self.seed);
        w.u32(self.stack as u32);
        w.u32(self.n_mels as u32);
        w.u32(self.vq.split_dim as u32);
        w.u32(d as u32);
        w.f64s(&self.klt.mean);
        w.f64s(&self.klt.basis);
        w.f64s(&self.klt.eigenvalues);
        w.u8(self.klt.rank_deficient as u8);
        w.u32(self.vq.allocations.len() as u32);
        for &b in &self.vq.allocations {
            w.u8(b as u8);
        }
        for cb in &self.vq.codebooks {
            w.f64s(cb);
        }
        w.finish_with_checksum()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::with_checksum(bytes, "quantizer model")?;
        r.expect_magic(MODEL_MAGIC)?;
        let version = r.u8()?;
        if version != MODEL_VERSION {
            return Err(Error::Version(format!("unsupported quantizer model version {version}")));
        }
        let digest = r.digest()?;
        let seed = r.u64()?;
        let stack = r.u32()? as usize;
        let n_mels = r.u32()? as usize;
        let split_dim = r.u32()? as usize;
        let dim = r.u32()? as usize;
        if stack == 0 || split_dim == 0 || dim != stack * n_mels {
            return Err(Error::Format("quantizer model: inconsistent dimensions".into()));
        }
        let mean = r.f64s(dim)?;
        let basis = r.f64s(dim * dim)?;
        let eigenvalues = r.f64s(dim)?;
        let rank_deficient = r.u8()? != 0;
        let n_splits = r.u32()? as usize;
        if n_splits != dim.div_ceil(split_dim) {
            return Err(Error::Format("quantizer model: wrong split count".into()));
        }
        let allocations: Vec<usize> = (0..n_splits).map(|_| r.u8().map(usize::from)).collect::<Result<_>>()?;
        let mut vq = SplitVqModel {
            split_dim,
            allocations,
            codebooks: Vec::with_capacity(n_splits),
            dim,
        };
        for k in 0..n_splits {
            let bits = vq.allocations[k];
            let n = if bits == 0 { 0 } else { (1usize << bits) * vq.split_range(k).len() };
            vq.codebooks.push(r.f64s(n)?);
        }
        r.finish()?;
        Ok(Self {
            digest,
            seed,
            stack,
            n_mels,
            klt: KltModel {
                mean,
                basis,
                eigenvalues,
                rank_deficient,
            },
            vq,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Mean per-frame log-spectral distortion in dB between two natural-log mel
/// sequences (compared over their common length).
pub fn log_spectral_distortion_db(reference: &[MelFrame], test: &[MelFrame]) -> f64 {
    let to_db = 10.0 / std::f64::consts::LN_10;
    let n = reference.len().min(test.len());
    if n == 0 {
        return 0.0;
    }
    reference
        .iter()
        .zip(test)
        .map(|(a, b)| {
            let m = a.values.len() as f64;
            (a.values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| (to_db * (x - y)).powi(2))
                .sum::<f64>()
                / m)
                .sqrt()
        })
        .sum::<f64>()
        / n as f64
}
