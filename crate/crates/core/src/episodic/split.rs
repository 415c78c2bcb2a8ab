use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Disjoint base and novel class sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub base_class_ids: BTreeSet<u32>,
    pub novel_class_ids: BTreeSet<u32>,
}

impl SplitConfig {
    pub fn new(base: impl IntoIterator<Item = u32>, novel: impl IntoIterator<Item = u32>) -> Result<Self> {
        let split = SplitConfig {
            base_class_ids: base.into_iter().collect(),
            novel_class_ids: novel.into_iter().collect(),
        };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_class_ids.is_empty() || self.novel_class_ids.is_empty() {
            return Err(Error::InvalidSplit("base and novel class sets must be non-empty".into()));
        }
        let shared: Vec<u32> = self.base_class_ids.intersection(&self.novel_class_ids).copied().collect();
        if !shared.is_empty() {
            return Err(Error::InvalidSplit(format!(
                "classes {shared:?} are both base and novel"
            )));
        }
        Ok(())
    }

    /// Check every referenced class exists in the dataset's class table.
    pub fn validate_against(&self, classes: &BTreeMap<u32, String>) -> Result<()> {
        self.validate()?;
        for id in self.base_class_ids.iter().chain(&self.novel_class_ids) {
            if !classes.contains_key(id) {
                return Err(Error::UnknownClass(*id).context("split"));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let split: SplitConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        split.validate()?;
        Ok(split)
    }

    pub fn is_base(&self, class_id: u32) -> bool {
        self.base_class_ids.contains(&class_id)
    }

    pub fn is_novel(&self, class_id: u32) -> bool {
        self.novel_class_ids.contains(&class_id)
    }
}
