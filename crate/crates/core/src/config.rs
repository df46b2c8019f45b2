//! Experiment configuration as flat `section.key = value` text.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::losses::{LossConfig, LossKind, DEFAULT_LOG_FLOOR};
use crate::model::{InitScheme, OptimizerKind, SoftmaxModel};
use crate::simplex::ProbVector;
use crate::solvers::EmConfig;
use crate::trainer::{TrainConfig, YUpdateMode};
use crate::{Error, Result};

/// Where the data comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSource {
    /// IDX files in `data.path`.
    Mnist,
    /// CSV file at `data.path`.
    Csv,
    Anisotropic,
    MarginGap,
    Blobs,
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DataSource::Mnist),
            "csv" => Ok(DataSource::Csv),
            "gen:anisotropic" => Ok(DataSource::Anisotropic),
            "gen:margin_gap" => Ok(DataSource::MarginGap),
            "gen:blobs" => Ok(DataSource::Blobs),
            other => Err(Error::Config(format!(
                "data.source: unknown source '{other}' (expected mnist, csv, gen:anisotropic, gen:margin_gap or gen:blobs)"
            ))),
        }
    }
}

/// Clustering method: a loss trained by the self-labeling or gradient loop, or K-means.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Loss(LossKind),
    KMeans,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "kmeans" {
            return Ok(Method::KMeans);
        }
        s.parse::<LossKind>()
            .map(Method::Loss)
            .map_err(|_| Error::Config(format!("loss.kind: unknown method '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: String,
    pub path: Option<PathBuf>,
    pub label_column: Option<String>,
    /// Generator sample count.
    pub m: usize,
    /// Generator class count (blobs).
    pub k: usize,
    /// Generator dimension (blobs).
    pub n: usize,
    pub separation: f64,
    pub elongation: f64,
    pub tilt_degrees: f64,
    pub gap_width: f64,
    /// Generator seed; the data stays fixed across training seeds.
    pub seed: u64,
    /// Held-out fraction for experiments that need a test set.
    pub test_fraction: f64,
    /// Fraction of training labels used as seeds (weak supervision); 0 disables it.
    pub seed_ratio: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: "mnist".into(),
            path: None,
            label_column: None,
            m: 400,
            k: 10,
            n: 2,
            separation: 6.0,
            elongation: 8.0,
            tilt_degrees: 30.0,
            gap_width: 2.0,
            seed: 0,
            test_fraction: 0.2,
            seed_ratio: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Width of a ReLU hidden layer; 0 means a linear model.
    pub hidden: usize,
    pub init: InitScheme,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden: 0,
            init: InitScheme::Glorot,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    /// A loss name or `kmeans`.
    pub kind: String,
    /// Defaults to the loss's own default when unset.
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub beta: f64,
    pub log_floor: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            kind: "ours".into(),
            lambda: None,
            gamma: None,
            beta: 1.0,
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Base seed; run `i` uses `seed + i`.
    pub seed: u64,
    /// Number of seeds to run.
    pub seeds: usize,
    /// Independent runs per seed; the one with the lowest final loss is kept.
    pub restarts: usize,
    pub y_update_mode: YUpdateMode,
    pub shuffle: bool,
    pub optimizer: OptimizerKind,
    pub em_tolerance: f64,
    pub em_max_iterations: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::new(LossConfig::new(LossKind::Ours, 2));
        TrainSection {
            lr: base.lr,
            epochs: base.epochs,
            batch_size: base.batch_size,
            seed: 0,
            seeds: 1,
            restarts: 1,
            y_update_mode: base.y_update_mode,
            shuffle: base.shuffle,
            optimizer: base.optimizer,
            em_tolerance: base.em.tolerance,
            em_max_iterations: base.em.max_iterations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansSection {
    pub restarts: usize,
}

impl Default for KMeansSection {
    fn default() -> Self {
        KMeansSection {
            restarts: crate::kmeans::DEFAULT_RESTARTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write SVG figures for 2-D data.
    pub figures: bool,
    /// Write model checkpoints.
    pub checkpoints: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("runs"),
            figures: true,
            checkpoints: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub kmeans: KMeansSection,
    pub output: OutputSection,
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut String) {
    match value {
        toml::Value::Table(table) => {
            for (key, v) in table {
                let name = if prefix.is_empty() {
                    key.clone()
                } else {
                    format!("{prefix}.{key}")
                };
                flatten(&name, v, out);
            }
        }
        other => {
            let _ = writeln!(out, "{prefix} = {other}");
        }
    }
}

impl ExperimentConfig {
    /// One `section.key = value` line per set field, in declaration order.
    pub fn to_text(&self) -> String {
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut out = String::new();
        flatten("", &value, &mut out);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn method(&self) -> Result<Method> {
        self.loss.kind.parse()
    }

    pub fn data_source(&self) -> Result<DataSource> {
        self.data.source.parse()
    }

    /// Checks the settings that do not need the data. Messages name the offending key.
    pub fn validate(&self) -> Result<()> {
        let source = self.data_source()?;
        if matches!(source, DataSource::Mnist | DataSource::Csv) {
            match &self.data.path {
                None => {
                    return Err(Error::Config(format!(
                        "data.path: required for source '{}'",
                        self.data.source
                    )))
                }
                Some(p) if !p.exists() => {
                    return Err(Error::Config(format!(
                        "data.path: {} does not exist",
                        p.display()
                    )))
                }
                _ => {}
            }
        }
        if self.train.seeds == 0 {
            return Err(Error::Config("train.seeds: must be >= 1".into()));
        }
        if self.train.restarts == 0 {
            return Err(Error::Config("train.restarts: must be >= 1".into()));
        }
        if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs: must be >= 1".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size: must be >= 1".into()));
        }
        if !(self.train.lr >= 0.0 && self.train.lr.is_finite()) {
            return Err(Error::Config(
                "train.lr: must be a finite value >= 0".into(),
            ));
        }
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return Err(Error::Config(
                "data.test_fraction: must lie in (0, 1)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.data.seed_ratio) {
            return Err(Error::Config("data.seed_ratio: must lie in [0, 1]".into()));
        }
        if self.kmeans.restarts == 0 {
            return Err(Error::Config("kmeans.restarts: must be >= 1".into()));
        }
        if let Method::Loss(kind) = self.method()? {
            self.loss_config(kind, 2)?;
        }
        Ok(())
    }

    pub fn loss_config(&self, kind: LossKind, k: usize) -> Result<LossConfig> {
        let base = LossConfig::new(kind, k);
        let cfg = LossConfig {
            lambda: self.loss.lambda.unwrap_or(base.lambda),
            gamma: self.loss.gamma.unwrap_or(base.gamma),
            beta: self.loss.beta,
            log_floor: self.loss.log_floor,
            prior: ProbVector::uniform(k),
            kind,
        };
        cfg.validate()
            .map_err(|e| Error::Config(format!("loss: {e}")))?;
        Ok(cfg)
    }

    /// Training configuration for run `index` (seed `train.seed + index`).
    pub fn train_config(&self, kind: LossKind, k: usize, index: usize) -> Result<TrainConfig> {
        let loss = self.loss_config(kind, k)?;
        Ok(TrainConfig {
            em: EmConfig {
                tolerance: self.train.em_tolerance,
                max_iterations: self.train.em_max_iterations,
                record_trace: false,
                ..EmConfig::new(k)
            },
            loss,
            lr: self.train.lr,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.run_seed(index),
            y_update_mode: self.train.y_update_mode,
            shuffle: self.train.shuffle,
            optimizer: self.train.optimizer,
            checkpoint_dir: None,
        })
    }

    pub fn run_seed(&self, index: usize) -> u64 {
        self.train.seed.wrapping_add(index as u64)
    }

    pub fn build_model(&self, k: usize, n: usize, seed: u64) -> SoftmaxModel {
        if self.model.hidden > 0 {
            SoftmaxModel::with_hidden(k, n, self.model.hidden, seed)
        } else {
            SoftmaxModel::linear_with(k, n, seed, self.model.init)
        }
    }
}
