//! Versioned text checkpoints of a trained model pair. Arrays are stored as
//! decimal JSON numbers that round-trip exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::{ModelId, ModelState, TrainConfig};

pub const FORMAT: &str = "duoreid-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub a: ModelState,
    pub b: ModelState,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, a: ModelState, b: ModelState) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            config,
            a,
            b,
        }
    }

    fn check(&self, path: &Path) -> Result<()> {
        let bad = |reason: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: 1,
            reason,
        };
        if self.format != FORMAT {
            return Err(bad(format!("not a checkpoint (format {:?})", self.format)));
        }
        if self.version != VERSION {
            return Err(bad(format!(
                "checkpoint version {} unsupported (expected {VERSION})",
                self.version
            )));
        }
        if self.a.id != ModelId::A || self.b.id != ModelId::B {
            return Err(bad("model slots hold the wrong ids".into()));
        }
        if !self.a.encoder.is_finite() || !self.b.encoder.is_finite() {
            return Err(Error::NonFinite(format!(
                "encoder parameters in {}",
                path.display()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint = serde_json::from_str(&text)?;
        c.check(path)?;
        Ok(c)
    }
}
