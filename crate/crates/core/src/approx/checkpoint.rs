use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{PolicyModel, Vfa};
use crate::error::{FbtsError, Result};

/// Structured-text model checkpoint.
///
/// ```toml
/// kind = "policy"
/// iteration = 2
/// [model]
/// family = "linear_scores"
/// weights = [[...], [...]]
/// [model.features]
/// kind = "affine"
/// dim = 5
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Checkpoint {
    Policy { iteration: usize, model: PolicyModel },
    Vfa { iteration: usize, model: Vfa },
}

impl Checkpoint {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("checkpoints always serialize")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| FbtsError::Parse { context: "checkpoint".into(), message: e.to_string() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}
