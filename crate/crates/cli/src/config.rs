//! JSON experiment configuration.
//!
//! Relative paths are resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use igeood::eval::TuneGrid;
use igeood::scoring::ScorerSpec;
use igeood::stats::CentroidFitConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    BlackBox,
    GreyBox,
    WhiteBox,
    WhiteBoxPlus,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::BlackBox => "black_box",
            Setting::GreyBox => "grey_box",
            Setting::WhiteBox => "white_box",
            Setting::WhiteBoxPlus => "white_box_plus",
        }
    }
}

fn default_fgsm_eps() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setting: Setting,
    pub train: PathBuf,
    pub test_in: PathBuf,
    /// OOD test sets by name.
    pub test_out: BTreeMap<String, PathBuf>,
    /// Defaults to the training dump.
    #[serde(default)]
    pub validation_in: Option<PathBuf>,
    #[serde(default)]
    pub validation_out: Option<PathBuf>,
    /// Serialized network; needed for grey_box and for adversarial validation.
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Extra scorers reported next to the default columns.
    #[serde(default)]
    pub scorers: Vec<ScorerSpec>,
    /// Feature layers used by layer scores; defaults to every layer except
    /// `input`.
    #[serde(default)]
    pub feature_layers: Option<Vec<String>>,
    #[serde(default)]
    pub tune: Option<TuneGrid>,
    #[serde(default)]
    pub centroids: CentroidFitConfig,
    #[serde(default = "default_fgsm_eps")]
    pub fgsm_eps: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.test_out.is_empty() {
            return Err(CliError::Config(
                "test_out must name at least one OOD set".into(),
            ));
        }
        if self.setting == Setting::WhiteBoxPlus && self.validation_out.is_none() {
            return Err(CliError::Config(
                "white_box_plus requires an OOD validation dump (validation_out)".into(),
            ));
        }
        if self.setting == Setting::GreyBox && self.model.is_none() {
            return Err(CliError::Config("grey_box requires a model file".into()));
        }
        if self.fgsm_eps.is_nan() || self.fgsm_eps < 0.0 {
            return Err(CliError::Config("fgsm_eps must be non-negative".into()));
        }
        for s in &self.scorers {
            s.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(grid) = &self.tune {
            grid.validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        let mut paths = vec![&self.train, &self.test_in];
        paths.extend(self.test_out.values());
        paths.extend(self.validation_in.iter());
        paths.extend(self.validation_out.iter());
        paths.extend(self.model.iter());
        for p in paths {
            let full = self.resolve(p);
            if !full.exists() {
                return Err(CliError::Config(format!(
                    "path does not exist: {}",
                    full.display()
                )));
            }
        }
        Ok(())
    }
}
