//! Versioned JSON configuration files.
//!
//! Every config file carries `"version": 1` next to the fields of the type it
//! describes. Unknown fields are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use spend_nnet::{ModelConfig, TrainConfig};

pub const CONFIG_VERSION: u64 = 1;

/// Reads `path`, checks and strips its `version` field, then deserializes
/// the rest as `T`.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_config(&text).with_context(|| format!("invalid config {}", path.display()))
}

pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut value: serde_json::Value = serde_json::from_str(text)?;
    let obj = match value.as_object_mut() {
        Some(o) => o,
        None => bail!("config must be a JSON object"),
    };
    match obj.remove("version") {
        Some(v) if v.as_u64() == Some(CONFIG_VERSION) => {}
        Some(v) => bail!("unsupported config version {v}, expected {CONFIG_VERSION}"),
        None => bail!("missing \"version\" field"),
    }
    Ok(serde_json::from_value(value)?)
}

/// `T` serialized with a leading `version` field.
pub fn to_versioned_json<T: Serialize>(value: &T) -> Result<String> {
    let mut obj = serde_json::Map::new();
    obj.insert("version".into(), CONFIG_VERSION.into());
    match serde_json::to_value(value)? {
        serde_json::Value::Object(rest) => obj.extend(rest),
        _ => bail!("config types serialize to objects"),
    }
    let mut text = serde_json::to_string_pretty(&obj)?;
    text.push('\n');
    Ok(text)
}

/// Contents of `train.json`: network shape plus optimizer settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnmixMethod {
    Lasso,
    Mcr,
    Phasor,
}

impl std::str::FromStr for UnmixMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "lasso" => Ok(Self::Lasso),
            "mcr" => Ok(Self::Mcr),
            "phasor" => Ok(Self::Phasor),
            _ => Err(format!("unknown unmixing method {s:?} (lasso, mcr or phasor)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnmixStage {
    pub method: UnmixMethod,
    #[serde(default)]
    pub lambda: f64,
}

impl Default for UnmixStage {
    fn default() -> Self {
        Self {
            method: UnmixMethod::Lasso,
            lambda: 0.0,
        }
    }
}

/// Pass/fail limits checked at the end of a pipeline run. Unset limits are
/// not checked.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default)]
    pub snr_gain_min: Option<f64>,
    /// Denoised over raw MSE to the clean cube.
    #[serde(default)]
    pub mse_ratio_max: Option<f64>,
    /// Denoised over raw mean Fréchet distortion.
    #[serde(default)]
    pub distortion_ratio_max: Option<f64>,
    #[serde(default)]
    pub selected_axis: Option<spend_core::Axis>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verbosity {
    Error,
    #[default]
    Warn,
    Info,
    Debug,
}

impl Verbosity {
    pub fn level(self) -> log::LevelFilter {
        match self {
            Verbosity::Error => log::LevelFilter::Error,
            Verbosity::Warn => log::LevelFilter::Warn,
            Verbosity::Info => log::LevelFilter::Info,
            Verbosity::Debug => log::LevelFilter::Debug,
        }
    }
}

/// End-to-end run description. Relative paths resolve against the directory
/// of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Versioned [`spend_core::synth::PhantomSpec`] file.
    pub phantom: PathBuf,
    /// Versioned [`spend_core::synth::NoiseSpec`] file; its seed is replaced
    /// by one derived from `seed`.
    pub noise: PathBuf,
    /// Versioned [`TrainFile`]; its seeds are replaced likewise.
    pub train: PathBuf,
    pub out_dir: PathBuf,
    /// Checkpoint path; defaults to `model.ckpt` in `out_dir`.
    #[serde(default)]
    pub model: Option<PathBuf>,
    pub seed: u64,
    #[serde(default)]
    pub verbosity: Verbosity,
    /// Permutation axis, or `auto` to let the noise analysis choose.
    #[serde(default = "auto")]
    pub axis: String,
    #[serde(default)]
    pub unmix: UnmixStage,
    /// Signal ROI: pixels whose total truth concentration reaches this
    /// fraction of the maximum. Background: pixels with no component.
    #[serde(default = "half")]
    pub roi_fraction: f64,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "yes")]
    pub previews: bool,
}

fn auto() -> String {
    "auto".into()
}

fn half() -> f64 {
    0.5
}

fn yes() -> bool {
    true
}

impl PipelineConfig {
    /// Loads a pipeline config and resolves its paths.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = read_config(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.phantom, &mut cfg.noise, &mut cfg.train, &mut cfg.out_dir] {
            *p = base.join(&*p);
        }
        if let Some(m) = &mut cfg.model {
            *m = base.join(&*m);
        }
        Ok(cfg)
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }

    /// Every referenced input file exists.
    pub fn check_inputs(&self) -> Result<()> {
        for (what, p) in [("phantom spec", &self.phantom), ("noise spec", &self.noise), ("train config", &self.train)] {
            if !p.is_file() {
                bail!("{what} {} does not exist", p.display());
            }
        }
        if !(self.roi_fraction > 0.0 && self.roi_fraction <= 1.0) {
            bail!("roi_fraction must lie in (0, 1], got {}", self.roi_fraction);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_is_required_and_checked() {
        let ok: TrainFile = parse_config(r#"{"version": 1, "model": {"depth": 1, "base_channels": 4}}"#).unwrap();
        assert_eq!(ok.model.depth, 1);
        assert!(parse_config::<TrainFile>(r#"{"model": {}}"#).is_err());
        assert!(parse_config::<TrainFile>(r#"{"version": 2}"#).is_err());
        assert!(parse_config::<TrainFile>(r#"{"version": 1, "extra": 0}"#).is_err());
    }

    #[test]
    fn versioned_json_round_trips() {
        let tf = TrainFile::default();
        let text = to_versioned_json(&tf).unwrap();
        assert!(text.contains("\"version\": 1"));
        assert_eq!(parse_config::<TrainFile>(&text).unwrap(), tf);
    }
}
