//! Run configuration. Values come from defaults, then an optional TOML
//! file, then command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{Task, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Window length in seconds.
    pub delta: f64,
    pub jobs: usize,
    pub require_labels: bool,
    pub series: SeriesConfig,
    pub markov: MarkovConfig,
    pub generate: GenerateConfig,
    pub dissect: DissectConfig,
    pub classify: ClassifyConfig,
    pub svg: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            delta: 1.0,
            jobs: 1,
            require_labels: false,
            series: SeriesConfig::default(),
            markov: MarkovConfig::default(),
            generate: GenerateConfig::default(),
            dissect: DissectConfig::default(),
            classify: ClassifyConfig::default(),
            svg: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeriesConfig {
    pub length: usize,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        SeriesConfig {
            length: crate::series::DEFAULT_SERIES_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovConfig {
    pub bins: usize,
    /// One binning fitted on all groups instead of one per group.
    pub shared_bins: bool,
}

impl Default for MarkovConfig {
    fn default() -> Self {
        MarkovConfig {
            bins: crate::markov::DEFAULT_BINS,
            shared_bins: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub length: usize,
    /// Spacing between generated packets.
    pub iat_us: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            length: 1000,
            iat_us: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DissectConfig {
    pub min_sni_pct: f64,
}

impl Default for DissectConfig {
    fn default() -> Self {
        DissectConfig {
            min_sni_pct: crate::dissect::DEFAULT_MIN_BIFLOW_PCT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub task: Task,
    pub repetitions: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub dropout: f32,
    pub train_frac: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        ClassifyConfig {
            task: Task::App,
            repetitions: 5,
            epochs: t.epochs,
            batch: t.batch,
            lr: t.lr,
            dropout: t.dropout,
            train_frac: t.train_frac,
        }
    }
}

impl ClassifyConfig {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            train_frac: self.train_frac,
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            dropout: self.dropout,
        }
    }

    pub fn seeds(&self, base: u64) -> Vec<u64> {
        (0..self.repetitions as u64).map(|i| base + i).collect()
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(format!("delta must be positive, got {}", self.delta));
        }
        if self.jobs == 0 {
            return Err("jobs must be at least 1".into());
        }
        if self.markov.bins == 0 {
            return Err("markov.bins must be at least 1".into());
        }
        if self.series.length == 0 {
            return Err("series.length must be at least 1".into());
        }
        let c = &self.classify;
        if !(c.train_frac > 0.0 && c.train_frac < 1.0) {
            return Err("classify.train_frac must be in (0, 1)".into());
        }
        if c.batch == 0 || c.repetitions == 0 {
            return Err("classify.batch and classify.repetitions must be at least 1".into());
        }
        if !(0.0..1.0).contains(&c.dropout) {
            return Err("classify.dropout must be in [0, 1)".into());
        }
        Ok(())
    }
}
