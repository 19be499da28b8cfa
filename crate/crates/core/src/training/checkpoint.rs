//! TOML checkpoints of trained parameters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detectors::{NetParams, OampConfig};
use crate::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub layers: usize,
    pub tied: bool,
    pub gamma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    /// SHA-256 of the configuration that produced the checkpoint.
    pub config_digest: String,
    /// Epoch whose parameters were kept.
    pub epoch: usize,
    pub seed: u64,
    /// Validation loss per epoch, starting with the initial parameters.
    pub validation_history: Vec<f64>,
}

impl Checkpoint {
    pub fn scalar_count(&self) -> usize {
        self.gamma.len() + self.theta.as_ref().map_or(0, Vec::len)
    }

    fn check(&self) -> Result<()> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported schema version {} (expected {CHECKPOINT_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.gamma.len() != self.layers {
            return Err(Error::Checkpoint(format!(
                "{} gamma values for {} layers",
                self.gamma.len(),
                self.layers
            )));
        }
        match (&self.theta, self.tied) {
            (Some(_), true) => return Err(Error::Checkpoint("tied checkpoint carries theta values".into())),
            (None, false) => return Err(Error::Checkpoint("untied checkpoint is missing theta".into())),
            (Some(t), false) if t.len() != self.layers => {
                return Err(Error::Checkpoint(format!("{} theta values for {} layers", t.len(), self.layers)))
            }
            _ => {}
        }
        if let Some(v) = self.gamma.iter().chain(self.theta.iter().flatten()).find(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("non-finite parameter {v}")));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<NetParams> {
        self.check()?;
        Ok(match &self.theta {
            Some(theta) => NetParams::new(self.gamma.clone(), theta.clone())?,
            None => NetParams::tied(self.gamma.clone()),
        })
    }

    /// Parameters for a detector with the given configuration.
    pub fn params_for(&self, cfg: &OampConfig) -> Result<NetParams> {
        if cfg.layers != self.layers {
            return Err(Error::DimensionMismatch(format!(
                "checkpoint has {} layers but the detector is configured for {}",
                self.layers, cfg.layers
            )));
        }
        self.params()
    }

    pub fn to_toml(&self) -> Result<String> {
        self.check()?;
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let ck: Checkpoint = toml::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ck.check()?;
        Ok(ck)
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ck.to_toml()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_toml(&text)
}
