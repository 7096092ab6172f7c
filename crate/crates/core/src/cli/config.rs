//! TOML run configuration.
//!
//! ```toml
//! preset = "tiny"            # base model; [model] keys override it
//!
//! [model]
//! task = "demosaic"          # or "joint_denoise"
//!
//! [train]                    # TrainConfig; `seed` also seeds initialisation
//! steps = 2000
//!
//! [loss]                     # LossConfig
//! alpha = 0.16
//!
//! [paths]
//! train_dir = "data/train"   # P6/PFM images
//! val_dir = "data/val"
//! out_dir = "runs/tiny"
//!
//! [eval]
//! sigmas = [0, 5, 10, 15]    # 8-bit noise levels
//! ```
//!
//! Unknown keys are rejected. `key.path=value` overrides are applied to the
//! parsed document before resolution, values in TOML syntax (bare words are
//! taken as strings).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::ModelConfig;
use crate::tensor::Precision;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Checkpoint to evaluate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint to continue training from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            train_dir: None,
            val_dir: None,
            eval_dir: None,
            out_dir: PathBuf::from("runs/mfdp"),
            checkpoint: None,
            resume: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Noise levels in 8-bit units; each is applied as σ/255.
    pub sigmas: Vec<f64>,
    /// Seed of the simulated capture noise.
    pub seed: u64,
    pub precision: Precision,
    /// Write each output and its magnified error image.
    pub save_images: bool,
    /// Report label; defaults to the dataset directory name.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_name: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { sigmas: vec![0.0], seed: 0, precision: Precision::Standard, save_images: false, dataset_name: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::config("config", detail)
}

fn parse_value(text: &str) -> toml::Value {
    match format!("v = {text}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key just parsed"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

/// Applies `a.b.c=value` to the document, creating tables as needed.
fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, value) = spec.split_once('=').ok_or_else(|| bad(format!("override `{spec}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(bad(format!("override `{spec}` has an empty key segment")));
    }
    let (last, parents) = path.split_last().expect("split yields one segment");
    let mut table = root;
    for p in parents {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| bad(format!("override `{spec}`: `{p}` is not a table")))?;
    }
    table.insert(last.to_string(), parse_value(value.trim()));
    Ok(())
}

impl RunConfig {
    /// Defaults of the named preset.
    pub fn for_preset(preset: &str) -> Result<Self> {
        Self::parse(&format!("preset = \"{preset}\""), &[])
    }

    /// Parses TOML text and applies overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let preset = match root.get("preset") {
            None => "default".to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(other) => return Err(bad(format!("`preset` must be a string, got {other}"))),
        };
        let base = ModelConfig::preset(&preset)?;
        let mut model = match toml::Value::try_from(&base).map_err(|e| bad(e.to_string()))? {
            toml::Value::Table(t) => t,
            _ => unreachable!("a struct serialises to a table"),
        };
        match root.remove("model") {
            None => {}
            Some(toml::Value::Table(t)) => model.extend(t),
            Some(other) => return Err(bad(format!("`model` must be a table, got {other}"))),
        }
        root.insert("preset".into(), toml::Value::String(preset));
        root.insert("model".into(), toml::Value::Table(model));
        let cfg: RunConfig = toml::Value::Table(root).try_into().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        if self.eval.sigmas.is_empty() || self.eval.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::config("eval.sigmas", "needs at least one finite level ≥ 0"));
        }
        Ok(())
    }

    /// The fully resolved configuration as TOML; parsing it gives back `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }
}
