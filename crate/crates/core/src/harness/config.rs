use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::optim::AdamWConfig;
use super::schedule::ScheduleConfig;
use crate::data::{default_class_names, load_image_dir, split_subject_kfold, Dataset, FoldSplit, Generator, GeneratorConfig};
use crate::error::{bail_arg, Error, Result};
use crate::hypergraph::Hypergraph;
use crate::model::{ModelConfig, DEFAULT_LAMBDA};

/// Images on disk under `root/<modality>/<expression>/<subject>_<idx>.<ext>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectorySource {
    pub path: PathBuf,
    #[serde(default = "one")]
    pub channels: usize,
    #[serde(default = "default_class_names")]
    pub classes: Vec<String>,
    #[serde(default = "twelve")]
    pub num_vertices: usize,
    /// Incidence file replacing the built-in AU table.
    #[serde(default)]
    pub hypergraph: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn twelve() -> usize {
    12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(GeneratorConfig),
    Directory(DirectorySource),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(GeneratorConfig::default())
    }
}

impl DataSource {
    pub fn hypergraph(&self) -> Result<Hypergraph> {
        match self {
            DataSource::Synthetic(g) => g.hypergraph(),
            DataSource::Directory(d) => {
                let full = match &d.hypergraph {
                    Some(path) => Hypergraph::load(path)?,
                    None => Hypergraph::default_knowledge(),
                };
                let graph = full.restrict(d.num_vertices, d.classes.len())?;
                for (edge, class) in graph.edge_names().iter().zip(&d.classes) {
                    if !edge.eq_ignore_ascii_case(class) {
                        log::warn!("class {class:?} is paired with hyperedge {edge:?}");
                    }
                }
                Ok(graph)
            }
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Synthetic(g) => Ok(Generator::new(g.clone())?.generate()),
            DataSource::Directory(d) => load_image_dir(&d.path, &d.classes, d.channels),
        }
    }

    fn channels(&self) -> usize {
        match self {
            DataSource::Synthetic(g) => g.channels,
            DataSource::Directory(d) => d.channels,
        }
    }

    fn num_classes(&self) -> usize {
        match self {
            DataSource::Synthetic(g) => g.num_classes,
            DataSource::Directory(d) => d.classes.len(),
        }
    }
}

/// Everything a training run depends on. Serialized as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub folds: usize,
    /// Fold evaluated by `train` and `eval`; ignored when the dataset
    /// carries its own held-out fold.
    pub test_fold: usize,
    /// Training images are resized to `image_size + margin` and randomly
    /// cropped; evaluation crops the center.
    pub margin: usize,
    pub model: ModelConfig,
    pub optimizer: AdamWConfig,
    pub schedule: ScheduleConfig,
    pub data: DataSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            batch_size: 64,
            epochs: 40,
            learning_rate: 1e-4,
            seed: 0,
            folds: 5,
            test_fold: 0,
            margin: 0,
            model: ModelConfig::default(),
            optimizer: AdamWConfig::default(),
            schedule: ScheduleConfig::default(),
            data: DataSource::default(),
        }
    }
}

/// Interprets a command-line value as TOML (`3`, `0.1`, `true`, `[1, 2]`),
/// falling back to a bare string.
pub fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `dotted` (for example `model.depth`) in `table`, creating
/// intermediate tables as needed.
pub fn set_path(table: &mut toml::Table, dotted: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = dotted.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty key {dotted:?}")))?;
    let mut current = table;
    for part in parts {
        let entry = current.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry.as_table_mut().ok_or_else(|| Error::Config(format!("{dotted}: {part} is not a table")))?;
    }
    current.insert(last.to_string(), value);
    Ok(())
}

/// Parses a TOML document and applies `overrides` before deserializing.
pub fn parse_with_overrides<T: serde::de::DeserializeOwned>(text: &str, overrides: &[(String, toml::Value)]) -> Result<T> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for (key, value) in overrides {
        set_path(&mut table, key, value.clone())?;
    }
    T::deserialize(toml::Value::Table(table)).map_err(|e| Error::Config(e.to_string()))
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::with_overrides(text, &[])
    }

    pub fn with_overrides(text: &str, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let cfg: Self = parse_with_overrides(text, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            bail_arg!("λ must be a finite non-negative number, got {}", self.lambda);
        }
        if self.batch_size == 0 || self.epochs == 0 {
            bail_arg!("batch size and epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bail_arg!("learning rate must be positive, got {}", self.learning_rate);
        }
        if self.optimizer.weight_decay < 0.0 {
            bail_arg!("weight decay must be non-negative");
        }
        if self.folds < 2 || self.test_fold >= self.folds {
            bail_arg!("need k ≥ 2 folds and test fold < k, got k = {} and fold {}", self.folds, self.test_fold);
        }
        self.schedule.validate()?;
        self.model.validate()?;
        if self.model.channels != self.data.channels() {
            bail_arg!("model expects {} channels, data has {}", self.model.channels, self.data.channels());
        }
        if self.model.num_classes != self.data.num_classes() {
            bail_arg!("model has {} classes, data has {}", self.model.num_classes, self.data.num_classes());
        }
        if let DataSource::Synthetic(g) = &self.data {
            g.validate()?;
            if g.image_size + self.margin < self.model.image_size {
                bail_arg!("generated images of side {} cannot be cropped to {}", g.image_size, self.model.image_size);
            }
        }
        Ok(())
    }

    /// Test split for single-run commands: the dataset's own held-out fold
    /// if it has one, otherwise `test_fold` of a seeded subject k-fold.
    pub fn holdout(&self, dataset: &Dataset) -> Result<(FoldSplit, usize)> {
        match &dataset.holdout {
            Some(split) => Ok((split.clone(), 0)),
            None => Ok((split_subject_kfold(dataset, self.folds, self.seed)?, self.test_fold)),
        }
    }
}
