//! Run configuration: one TOML (or JSON) file driving every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::BenchConfig;
use crate::detector::TrainConfig;
use crate::episodic::SplitConfig;
use crate::error::{Error, Result};
use crate::synthgen::{DomainSpec, GapPreset, SceneSpec};

/// Where the on-disk datasets live and how they are split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Annotation JSON of the source domain; images resolve relative to its
    /// directory.
    pub source: PathBuf,
    /// Optional target-domain annotation JSON, used for mixed-domain
    /// meta-training and target evaluation.
    pub target: Option<PathBuf>,
    /// Trailing fraction of each domain's images (in id order) held out for
    /// testing.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: PathBuf::from("data/source/annotations.json"),
            target: Some(PathBuf::from("data/target/annotations.json")),
            test_fraction: 0.25,
        }
    }
}

/// Synthetic data generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_images: usize,
    pub gap_preset: GapPreset,
    pub scene: SceneSpec,
    /// Replace the preset's source rendering.
    pub source: Option<DomainSpec>,
    /// Replace the preset's target rendering.
    pub target: Option<DomainSpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_images: 400,
            gap_preset: GapPreset::Default,
            scene: SceneSpec::default(),
            source: None,
            target: None,
        }
    }
}

impl SynthConfig {
    pub fn source_spec(&self) -> DomainSpec {
        self.source.clone().unwrap_or_else(|| self.gap_preset.source())
    }

    pub fn target_spec(&self) -> DomainSpec {
        self.target.clone().unwrap_or_else(|| self.gap_preset.target())
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.source_spec().validate()?;
        self.target_spec().validate()
    }
}

/// Which classes the evaluator averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalClasses {
    Novel,
    Base,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub classes: EvalClasses,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            classes: EvalClasses::Novel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; overrides `train.seed`.
    pub seed: u64,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataConfig::default(),
            split: SplitConfig::new([1, 2, 3, 4], [5, 6]).expect("valid split"),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricsConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse TOML, or JSON when the file name ends in `.json`, then
    /// validate. Unknown keys are rejected.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg = if is_json {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
        .map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.train.pipeline.load_backgrounds()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.finish()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.finish()?;
        Ok(cfg)
    }

    fn finish(&mut self) -> Result<()> {
        self.set_seed(self.seed);
        self.validate()
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.exists() && base.join(&*p).exists() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.source);
        if let Some(t) = self.data.target.as_mut() {
            fix(t);
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(Error::Config(format!(
                "data.test_fraction must be in [0, 1), got {}",
                self.data.test_fraction
            )));
        }
        self.split.validate().map_err(wrap)?;
        self.synth.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        self.bench.validate().map_err(wrap)?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable config")
    }
}
