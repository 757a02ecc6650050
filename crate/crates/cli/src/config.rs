use std::fs;
use std::path::{Path, PathBuf};

use apln_core::data::{load_dataset, synthesize_dataset, CorruptionSpec, MultiViewDataset};
use apln_core::pipeline::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Parameters of the Gaussian multi-view generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub views: usize,
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            samples: 2000,
            views: 6,
            classes: 10,
            dim: 8,
            separation: 2.5,
        }
    }
}

/// Everything a `train` run needs. Only the data source has no default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub corruption: CorruptionSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Root seed; the corruption, synthetic and training seeds derive from it.
    #[serde(default)]
    pub seed: u64,
    /// Also train the zero- and mean-imputation baselines.
    #[serde(default)]
    pub baselines: bool,
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/default")
}

impl RunConfig {
    /// Reads TOML or JSON depending on the file extension.
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let parsed: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?,
        };
        Ok(parsed.resolved())
    }

    /// Pushes the root seed into every component.
    pub fn resolved(mut self) -> Self {
        self.corruption.seed = self.seed;
        self.train.seed = self.seed;
        self
    }

    pub fn validate(&self) -> CliResult<()> {
        match (&self.dataset, &self.synthetic) {
            (None, None) => {
                return Err(CliError::usage(
                    "config needs a data source: set `dataset` or a `[synthetic]` table",
                ))
            }
            (Some(_), Some(_)) => {
                return Err(CliError::usage(
                    "config sets both `dataset` and `[synthetic]`; choose one",
                ))
            }
            _ => {}
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(CliError::usage(format!(
                "test_fraction {} must lie strictly between 0 and 1",
                self.test_fraction
            )));
        }
        self.train
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))
    }

    pub fn load_data(&self) -> CliResult<MultiViewDataset> {
        if let Some(dir) = &self.dataset {
            return Ok(load_dataset(dir)?);
        }
        let s = self.synthetic.clone().unwrap_or_default();
        synthesize_dataset(
            s.samples,
            s.views,
            s.classes,
            s.dim,
            s.separation,
            self.seed,
        )
        .map_err(|e| CliError::usage(format!("synthetic spec: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_fills_defaults() {
        let cfg: RunConfig = toml::from_str("dataset = \"data/hw\"\nseed = 3\n").unwrap();
        let cfg = cfg.resolved();
        assert_eq!(cfg.test_fraction, 0.2);
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.corruption.seed, 3);
        assert_eq!(cfg.train.epochs_v, TrainConfig::default().epochs_v);
        cfg.validate().unwrap();
    }

    #[test]
    fn data_source_is_required() {
        let cfg: RunConfig = toml::from_str("seed = 1\n").unwrap();
        assert_eq!(cfg.validate().unwrap_err().code, 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("dataset = \"x\"\n[train]\nepochs = 3\n").is_err());
    }

    #[test]
    fn json_and_toml_agree() {
        let t: RunConfig =
            toml::from_str("[synthetic]\nsamples = 100\n[corruption]\neta = 0.3\n").unwrap();
        let j: RunConfig =
            serde_json::from_str(r#"{"synthetic": {"samples": 100}, "corruption": {"eta": 0.3}}"#)
                .unwrap();
        assert_eq!(t, j);
    }
}
