use std::path::{Path, PathBuf};

use fairforge::eval::DEFAULT_THRESHOLD;
use fairforge::nn::ModelSpec;
use fairforge::sam::SamConfig;
use fairforge::synth::{BalancePolicy, SynthConfig};
use serde::{Deserialize, Serialize};

/// The single JSON configuration document. Every section is optional; unknown keys fail.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; `--seed` overrides it and it overrides `train.seed`.
    pub seed: Option<u64>,
    pub paths: PathsConfig,
    pub synth: SynthConfig,
    pub balance: BalancePolicy,
    pub model: ModelSpec,
    pub train: SamConfig,
    pub eval: EvalConfig,
}

/// Relative paths in a config file resolve against the file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    /// Root for image paths; defaults to the manifest's directory.
    pub image_root: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub threshold: f64,
    /// Report label; defaults to the manifest's source name, then the predictions file stem.
    pub dataset_name: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            dataset_name: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut cfg.paths;
        for slot in [&mut p.manifest, &mut p.image_root, &mut p.checkpoint, &mut p.predictions, &mut p.out] {
            if let Some(rel) = slot.as_mut().filter(|p| p.is_relative()) {
                *rel = base.join(&*rel);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.synth.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        fairforge::nn::Network::new(self.model.clone()).map_err(|e| e.to_string())?;
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(format!("eval.threshold {} must lie in [0, 1]", self.eval.threshold));
        }
        Ok(())
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config always serializes") + "\n"
    }
}
