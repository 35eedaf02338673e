//! Experiment configuration: one TOML document with `[model]`, `[train]`,
//! `[loss]`, `[inference]` and `[data]` tables, plus `key.path=value`
//! overrides applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ugcn_core::data::Normalizer;
use ugcn_core::infer::InferenceConfig;
use ugcn_core::loss::LossConfig;
use ugcn_core::model::ModelConfig;
use ugcn_core::synth::SynthMotionSpec;
use ugcn_core::train::TrainConfig;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of `NAME.2d.pose` / `NAME.3d.pose` training pairs. When
    /// unset, training data is generated from `synth`.
    pub train_dir: Option<PathBuf>,
    /// Held-out pairs; defaults to a split of the synthetic data.
    pub test_dir: Option<PathBuf>,
    /// `h36m17` or a path to a topology file.
    pub topology: String,
    pub synth: SynthMotionSpec,
    /// Synthetic sequences per action reserved for evaluation.
    pub held_out_per_action: usize,
    pub normalizer: Normalizer,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_dir: None,
            test_dir: None,
            topology: "h36m17".into(),
            synth: SynthMotionSpec::default(),
            held_out_per_action: 2,
            normalizer: Normalizer::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    /// The `loss` field of this table is ignored; see `[loss]`.
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub inference: InferenceConfig,
    pub data: DataConfig,
    /// Artifacts directory.
    pub output: PathBuf,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            inference: InferenceConfig::default(),
            data: DataConfig::default(),
            output: PathBuf::from("runs/default"),
            checkpoint_every: 0,
        }
    }
}

impl ExperimentConfig {
    /// A desk-scale setup: 32-frame windows, width 8, 20 epochs on
    /// synthetic data.
    pub fn toy() -> Self {
        let mut c = Self::default();
        c.model.frames = 32;
        c.model.channels = 8;
        c.model.dropout = 0.1;
        c.train.window = 32;
        c.train.window_stride = 16;
        c.train.epochs = 20;
        c.train.batch_size = 16;
        c.train.lr_milestones = vec![14, 17, 19];
        c.inference.window = 32;
        c.inference.step = 4;
        c.loss.intervals = vec![8, 12, 16, 24];
        c.data.synth.frames = 96;
        c.output = PathBuf::from("runs/toy");
        c
    }

    /// The toy setup at the data size used for the seed-averaged
    /// comparisons: six actions, twelve training sequences each.
    pub fn trend() -> Self {
        let mut c = Self::toy();
        c.train.batch_size = 8;
        c.data.synth.actions = 6;
        c.data.synth.sequences_per_action = 14;
        c.output = PathBuf::from("runs/trend");
        c
    }

    pub const PRESETS: [&'static str; 3] = ["default", "toy", "trend"];

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "toy" => Ok(Self::toy()),
            "trend" => Ok(Self::trend()),
            _ => Err(Error::Config(format!(
                "unknown preset `{name}` (expected one of {})",
                Self::PRESETS.join(", ")
            ))),
        }
    }

    /// The training configuration with `[loss]` folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss.clone(),
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train_config().validate()?;
        self.inference.validate()?;
        self.data.synth.validate()?;
        if self.train.window != self.model.frames || self.inference.window != self.model.frames {
            return Err(Error::Config(format!(
                "train.window ({}) and inference.window ({}) must equal model.frames ({})",
                self.train.window, self.inference.window, self.model.frames
            )));
        }
        for dir in [&self.data.train_dir, &self.data.test_dir].into_iter().flatten() {
            if !dir.is_dir() {
                return Err(Error::Config(format!("dataset directory {} does not exist", dir.display())));
            }
        }
        if self.data.test_dir.is_some() && self.data.train_dir.is_none() {
            return Err(Error::Config("data.test_dir requires data.train_dir".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration is always serializable")
    }

    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))
    }

    /// Reads `path` (or starts from `base`) and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, base: Self, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse().map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let base_table: toml::Table =
            toml::from_str(&base.to_toml()).expect("serialized configuration parses back");
        let merged = merge(base_table, table);
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}

fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                let merged = merge(std::mem::take(b), o);
                *b = merged;
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

/// Sets `a.b.c = value`; the value is parsed as TOML and falls back to a
/// plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
    let key = key.trim();
    let value: toml::Value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty key in `{assignment}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
