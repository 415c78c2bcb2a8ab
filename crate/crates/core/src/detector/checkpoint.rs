use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::ExtractorParams;
use crate::episodic::FewShotSets;
use crate::error::{Error, Result};

use super::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "xdfsod-checkpoint/1";

/// Trained parameters with the config that produced them and, after
/// meta-testing, the frozen few-shot supports used at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub params: ExtractorParams,
    pub config: TrainConfig,
    #[serde(default)]
    pub fewshot: Option<FewShotSets>,
    #[serde(default)]
    pub loss_trace: Vec<f64>,
}

impl Checkpoint {
    pub fn new(params: ExtractorParams, config: TrainConfig, fewshot: Option<FewShotSets>, loss_trace: Vec<f64>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            params,
            config,
            fewshot,
            loss_trace,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::from(e).context(format!("checkpoint {}", path.display())))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "{}: unsupported checkpoint format {:?} (expected {CHECKPOINT_FORMAT:?})",
                path.display(),
                ck.format
            )));
        }
        ck.params.validate()?;
        Ok(ck)
    }
}
