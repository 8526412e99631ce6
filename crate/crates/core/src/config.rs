//! Single TOML document holding every configuration section, with digests
//! that bind artifacts to the settings they were produced under.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::model::ModelConfig;
use crate::quant::QuantizerConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub features: FeatureConfig,
    pub quantizer: QuantizerConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl CodecConfig {
    pub fn full() -> Self {
        Self {
            features: FeatureConfig::full(),
            quantizer: QuantizerConfig::full(),
            model: ModelConfig::full(),
            train: TrainConfig::full(),
        }
    }

    pub fn toy() -> Self {
        Self {
            features: FeatureConfig::toy(),
            quantizer: QuantizerConfig::full(),
            model: ModelConfig::toy(),
            train: TrainConfig::toy(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected full or toy)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.quantizer.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.features.sample_rate != self.model.sample_rate || self.features.n_mels != self.model.n_mels {
            return Err(Error::Config("[features] and [model] disagree on sample_rate or n_mels".into()));
        }
        let hop = self.features.hop_len();
        let spf = self.model.steps_per_frame()?;
        if hop != spf * self.model.n_bands {
            return Err(Error::Config(format!(
                "mel hop of {hop} samples does not match {spf} GRU steps of {} samples",
                self.model.n_bands
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    fn section_digest(&self, sections: &[&str]) -> [u8; 8] {
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut lines = BTreeMap::new();
        for s in sections {
            if let Some(v) = value.get(s) {
                flatten(s, v, &mut lines);
            }
        }
        let mut h = Sha256::new();
        for (k, v) in &lines {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.finalize()[..8].try_into().unwrap()
    }

    /// Digest of the whole document.
    pub fn digest(&self) -> [u8; 8] {
        self.section_digest(&["features", "quantizer", "model", "train"])
    }

    /// Binds quantizer artifacts and bitstreams: features and quantizer.
    pub fn quantizer_digest(&self) -> [u8; 8] {
        self.section_digest(&["features", "quantizer"])
    }

    /// Binds model checkpoints: features and model architecture.
    pub fn model_digest(&self) -> [u8; 8] {
        self.section_digest(&["features", "model"])
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                flatten(&format!("{prefix}.{k}"), v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

pub fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
