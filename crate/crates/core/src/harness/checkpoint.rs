use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::ModelKind;
use crate::datagen::Task;
use crate::embeddings::{EncodeMode, EncodeOptions, Vocab};
use crate::error::{Error, Result};
use crate::pipeline::{PipelineParams, Thresholds};
use crate::pop::PopParams;

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Trained parameters plus everything needed to encode inputs for them.
/// Stored as JSON; floats are written in shortest round-trip form so a
/// save/load cycle is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: u32,
    pub model: ModelKind,
    pub task: Task,
    pub encode: EncodeOptions,
    /// One-hot vocabulary (TRPoP only).
    pub vocab: Option<Vocab>,
    pub body: CheckpointBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CheckpointBody {
    Pop {
        params: PopParams,
    },
    Pipeline {
        params: PipelineParams,
        thresholds: Option<Thresholds>,
    },
}

impl Checkpoint {
    pub fn pop(model: ModelKind, task: Task, encode: EncodeOptions, vocab: Option<Vocab>, params: PopParams) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            model,
            task,
            encode,
            vocab,
            body: CheckpointBody::Pop { params },
        }
    }

    pub fn pipeline(task: Task, encode: EncodeOptions, params: PipelineParams, thresholds: Option<Thresholds>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            model: ModelKind::Pipeline,
            task,
            encode,
            vocab: None,
            body: CheckpointBody::Pipeline { params, thresholds },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::config(format!("unsupported checkpoint format {}", self.format)));
        }
        match (&self.body, self.model) {
            (CheckpointBody::Pop { params }, ModelKind::Pop | ModelKind::Trpop) => params.check_shapes()?,
            (CheckpointBody::Pipeline { .. }, ModelKind::Pipeline) => {}
            _ => {
                return Err(Error::config(format!(
                    "checkpoint body does not match model kind `{}`",
                    self.model.name()
                )))
            }
        }
        let one_hot = self.encode.mode == EncodeMode::OneHot;
        if one_hot != self.vocab.is_some() {
            return Err(Error::config("a vocabulary is stored exactly when the encoding is one-hot"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
