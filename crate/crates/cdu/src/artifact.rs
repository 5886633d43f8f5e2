//! Versioned model container: `artifact.json` holding a frozen autoencoder
//! (with its feature scaler) and optionally a fitted unlearning map. Floats
//! are written in round-trip form, so a reload is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use cdu_core::autoencoder::Autoencoder;
use cdu_core::unlearner::UnlearnMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ARTIFACT_FILE: &str = "artifact.json";
pub const ARTIFACT_FORMAT: &str = "cdu-artifact";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    pub format: String,
    pub format_version: u32,
    pub autoencoder: Autoencoder,
    #[serde(default)]
    pub unlearner: Option<UnlearnMap>,
    /// Free-form provenance such as seeds and data sources.
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Artifact {
    pub fn new(autoencoder: Autoencoder) -> Self {
        Artifact {
            format: ARTIFACT_FORMAT.to_string(),
            format_version: ARTIFACT_VERSION,
            autoencoder,
            unlearner: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != ARTIFACT_FORMAT {
            return Err(Error::Data(format!("not a model artifact (format {:?})", self.format)));
        }
        if self.format_version != ARTIFACT_VERSION {
            return Err(Error::Data(format!(
                "unsupported artifact version {}",
                self.format_version
            )));
        }
        self.autoencoder.validate()?;
        if !self.autoencoder.is_frozen() {
            return Err(Error::Data("stored autoencoder is not frozen".into()));
        }
        if let Some(map) = &self.unlearner {
            map.validate()?;
            if map.dim() != self.autoencoder.input_dim() {
                return Err(Error::Data(format!(
                    "unlearning map has dimension {} but the autoencoder expects {}",
                    map.dim(),
                    self.autoencoder.input_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Data(format!("cannot serialize artifact: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Artifact = serde_json::from_str(text).map_err(|e| Error::Data(format!("malformed artifact: {e}")))?;
        a.validate()?;
        Ok(a)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(ARTIFACT_FILE);
        std::fs::write(&path, self.to_json()?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(ARTIFACT_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text).map_err(|e| e.context(path.display().to_string()))
    }
}
