use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NumericError, ParamStore};

const FORMAT: &str = "relatt-checkpoint/1";

/// Every named parameter tensor of a run, plus the configuration it was
/// produced under. Stored as JSON; doubles are written in shortest
/// round-trip form so reading back is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub vocabularies: BTreeMap<String, Vec<String>>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(config_hash: impl Into<String>, params: ParamStore) -> Self {
        Self {
            format: FORMAT.to_string(),
            config_hash: config_hash.into(),
            config: BTreeMap::new(),
            vocabularies: BTreeMap::new(),
            params,
        }
    }

    pub fn to_json(&self) -> Result<String, NumericError> {
        serde_json::to_string(self).map_err(|e| NumericError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, NumericError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| NumericError::Checkpoint(e.to_string()))?;
        if ck.format != FORMAT {
            return Err(NumericError::Checkpoint(format!(
                "unsupported format `{}`, expected `{FORMAT}`",
                ck.format
            )));
        }
        for (name, t) in ck.params.iter() {
            let [r, c] = t.shape();
            if r * c != t.len() || !t.is_finite() {
                return Err(NumericError::Checkpoint(format!("tensor `{name}` is malformed")));
            }
        }
        Ok(ck)
    }

    /// Writes to a sibling temporary file first, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<(), NumericError> {
        let json = self.to_json()?;
        let tmp = path.with_extension("tmp");
        let io = |e: std::io::Error| NumericError::Checkpoint(format!("{}: {e}", path.display()));
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(json.as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, NumericError> {
        let text = fs::read_to_string(path)
            .map_err(|e| NumericError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
