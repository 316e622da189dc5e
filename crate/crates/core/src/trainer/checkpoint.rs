//! Checkpoint files are pretty-printed JSON with these fields:
//!
//! | field          | content                                              |
//! |----------------|------------------------------------------------------|
//! | `version`      | format version, currently 1                          |
//! | `step`         | completed optimizer steps                            |
//! | `embedder`     | `widths`, `activation`, `layer_norm_output`          |
//! | `params`       | flat embedder parameters                             |
//! | `proxies`      | one coordinate array per class                       |
//! | `adam_model`   | `m`, `v`, `t` for the embedder parameters            |
//! | `adam_proxies` | `m`, `v`, `t` for the flattened proxies              |
//! | `sampler`      | batch RNG `seed`, `stream` and `word_pos` (string)   |
//!
//! Floats are written with shortest round-trip formatting, so loading a
//! checkpoint reproduces every value bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, EmbedderSpec, RngState};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub step: usize,
    pub embedder: EmbedderSpec,
    pub params: Vec<f64>,
    pub proxies: Vec<Vec<f64>>,
    pub adam_model: AdamState,
    pub adam_proxies: AdamState,
    pub sampler: RngState,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::BadField {
                path: path.to_path_buf(),
                field: "version",
                message: format!("expected {CHECKPOINT_VERSION}, found {}", ck.version),
            });
        }
        if ck.params.len() != ck.embedder.num_params() {
            return Err(Error::BadField {
                path: path.to_path_buf(),
                field: "params",
                message: format!(
                    "{} values for a network with {}",
                    ck.params.len(),
                    ck.embedder.num_params()
                ),
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text, path)
    }
}
