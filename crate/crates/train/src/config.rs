//! Run configuration: a TOML file merged over defaults, then `key=value`
//! overrides with dotted keys.

use std::path::{Path, PathBuf};

use avs_core::fusion::FusionMode;
use avs_core::model::ModelConfig;
use avs_core::objectives::LossConfig;
use avs_core::optim::AdamConfig;
use avs_core::types::SettingKind;
use avs_data::{LoaderOptions, Split};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Result, TrainError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Scratch,
    FromCheckpoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub setting: SettingKind,
    pub data_root: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// `None` picks 15 / 30 / 60 for S4 / MS3 / AVSS.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub adam: AdamConfig,
    pub hflip: bool,
    pub init: InitMode,
    pub init_checkpoint: Option<PathBuf>,
    pub eval_split: Split,
    /// Stop after this many training videos per epoch (0 = all).
    pub max_train_videos: usize,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub loader: LoaderOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            setting: SettingKind::Ms3,
            data_root: PathBuf::from("data"),
            output_dir: PathBuf::from("runs/default"),
            seed: 0,
            epochs: None,
            batch_size: 4,
            lr: 1e-4,
            lr_schedule: LrSchedule::Constant,
            adam: AdamConfig::default(),
            hflip: false,
            init: InitMode::Scratch,
            init_checkpoint: None,
            eval_split: Split::Valid,
            max_train_videos: 0,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            loader: LoaderOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.setting {
            SettingKind::S4 => 15,
            SettingKind::Ms3 => 30,
            SettingKind::Avss => 60,
        })
    }

    pub fn setting_clips(&self) -> usize {
        match self.setting {
            SettingKind::Avss => 10,
            _ => 5,
        }
    }

    pub fn check(&self) -> Result<()> {
        let fail = |m: &str| Err(TrainError::Config(m.into()));
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if self.model.fusion == FusionMode::Tpavi && self.model.tpavi_stages.is_empty() {
            return fail("tpavi_stages must be non-empty when fusion = tpavi");
        }
        if self.init == InitMode::FromCheckpoint && self.init_checkpoint.is_none() {
            return fail("init = from_checkpoint needs init_checkpoint");
        }
        self.loss.check()?;
        self.model.check()?;
        Ok(())
    }

    /// Learning rate for `step` of `total` optimizer steps.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let progress = step as f64 / total.max(1) as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Defaults, then `file` (if any), then each `key=value` override.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let cfg: TrainConfig = resolve_layers(file, overrides)?;
        cfg.check()?;
        Ok(cfg)
    }
}

/// Layers a TOML file and dotted overrides over `T::default()`.
pub fn resolve_layers<T: Default + Serialize + DeserializeOwned>(file: Option<&Path>, overrides: &[String]) -> Result<T> {
    let mut table = Table::try_from(T::default()).map_err(|e| TrainError::Config(e.to_string()))?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        let user: Table = toml::from_str(&text).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        merge(&mut table, user);
    }
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    Value::Table(table).try_into().map_err(|e: toml::de::Error| TrainError::Config(e.to_string()))
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `a.b.c=value`; the value is read as TOML and falls back to a string.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| TrainError::Config(format!("override {spec:?} is not key=value")))?;
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| TrainError::Config(format!("override {key}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
