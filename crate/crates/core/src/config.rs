//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{LinkSchedule, Segment};
use crate::error::{FieldError, Result, SafariError};
use crate::rng::{self, Purpose};
use crate::server::AggregationMode;
use crate::sparsity::MaskAlgorithm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub data: DataSection,
    pub partition: PartitionSection,
    pub training: TrainingSection,
    pub sparsity: SparsitySection,
    pub channel: ChannelSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: u64,
    pub rounds: usize,
    #[serde(default = "default_modes")]
    pub modes: Vec<AggregationMode>,
    #[serde(default = "one")]
    pub eval_every: usize,
    #[serde(default)]
    pub oracle_mode: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Dump the similarity matrix every this many rounds (0 = only at the end).
    #[serde(default)]
    pub similarity_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_dim: default_hidden(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Load samples from this CSV instead of generating blobs.
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default = "default_classes")]
    pub class_count: usize,
    #[serde(default = "default_samples")]
    pub samples_per_class: usize,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            csv: None,
            class_count: default_classes(),
            samples_per_class: default_samples(),
            input_dim: default_input_dim(),
            spread: default_spread(),
            holdout_fraction: default_holdout(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    /// Disjoint samples, group-shared label sets.
    Noniid,
    /// Identical samples within each group.
    Clone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub mode: PartitionMode,
    pub clients: usize,
    pub groups: usize,
    #[serde(default)]
    pub labels_per_client: Option<usize>,
    /// Clients of a group share batch and mask random streams.
    #[serde(default)]
    pub group_streams: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub local_steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparsitySection {
    pub algorithm: MaskAlgorithm,
    pub level: f64,
}

/// A link schedule as written in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LinkSpec {
    Uniform(f64),
    PerClient(Vec<f64>),
    /// CSV with one row per round and one column per client.
    Table(PathBuf),
    Piecewise { piecewise: Vec<Segment> },
}

impl Default for LinkSpec {
    fn default() -> Self {
        LinkSpec::Uniform(1.0)
    }
}

impl LinkSpec {
    pub fn to_schedule(&self, m: usize) -> Result<LinkSchedule> {
        Ok(match self {
            LinkSpec::Uniform(p) => LinkSchedule::uniform(m, *p),
            LinkSpec::PerClient(p) => LinkSchedule::Constant(p.clone()),
            LinkSpec::Table(path) => LinkSchedule::load_table(path)?,
            LinkSpec::Piecewise { piecewise } => LinkSchedule::Piecewise(piecewise.clone()),
        })
    }

    fn resolve(&mut self, base: &Path) {
        if let LinkSpec::Table(p) = self {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub uplink: LinkSpec,
    #[serde(default)]
    pub downlink: LinkSpec,
    /// Defaults to a value derived from the experiment seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_sigma_draws")]
    pub sigma_draws: usize,
    #[serde(default = "default_beta_max")]
    pub beta_max: f64,
    #[serde(default = "default_beta_points")]
    pub beta_points: usize,
    /// Keep a global-model snapshot every this many rounds for the
    /// dissimilarity and smoothness fits (0 = about ten snapshots).
    #[serde(default)]
    pub sample_every: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            sigma_draws: default_sigma_draws(),
            beta_max: default_beta_max(),
            beta_points: default_beta_points(),
            sample_every: 0,
        }
    }
}

fn default_modes() -> Vec<AggregationMode> {
    vec![AggregationMode::Safari]
}
fn one() -> usize {
    1
}
fn default_hidden() -> usize {
    32
}
fn default_classes() -> usize {
    10
}
fn default_samples() -> usize {
    300
}
fn default_input_dim() -> usize {
    10
}
fn default_spread() -> f64 {
    1.0
}
fn default_holdout() -> f64 {
    0.2
}
fn default_sigma_draws() -> usize {
    32
}
fn default_beta_max() -> f64 {
    10.0
}
fn default_beta_points() -> usize {
    19
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Parse a config file. Relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(csv) = cfg.data.csv.as_mut() {
            if csv.is_relative() {
                *csv = base.join(&*csv);
            }
        }
        cfg.channel.uplink.resolve(base);
        cfg.channel.downlink.resolve(base);
        Ok(cfg)
    }

    pub fn channel_seed(&self) -> u64 {
        self.channel
            .seed
            .unwrap_or_else(|| rng::derive_seed(self.experiment.seed, Purpose::Uplink, u64::MAX, 0))
    }

    /// Collect every invalid field.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        fn need_in(errs: &mut Vec<FieldError>, ok: bool, path: &str, msg: &str) {
            if !ok {
                errs.push(FieldError::new(path, msg));
            }
        }
        macro_rules! need {
            ($ok:expr, $path:expr, $msg:expr $(,)?) => {
                need_in(&mut errs, $ok, $path, $msg)
            };
        }
        let e = &self.experiment;
        need!(!e.modes.is_empty(), "experiment.modes", "at least one mode is required");
        need!(e.eval_every >= 1, "experiment.eval_every", "must be at least 1");
        need!(self.model.hidden_dim >= 1, "model.hidden_dim", "must be at least 1");

        let d = &self.data;
        if d.csv.is_none() {
            need!(d.class_count >= 1, "data.class_count", "must be at least 1");
            need!(d.samples_per_class >= 1, "data.samples_per_class", "must be at least 1");
            need!(d.input_dim >= 1, "data.input_dim", "must be at least 1");
            need!(
                d.spread.is_finite() && d.spread >= 0.0,
                "data.spread",
                "must be finite and nonnegative",
            );
        }
        need!(
            d.holdout_fraction > 0.0 && d.holdout_fraction < 1.0,
            "data.holdout_fraction",
            "must lie in (0, 1)",
        );

        let p = &self.partition;
        need!(p.clients >= 1, "partition.clients", "must be at least 1");
        need!(
            p.groups >= 1 && p.clients.is_multiple_of(p.groups.max(1)),
            "partition.groups",
            "must be at least 1 and divide partition.clients",
        );
        if p.mode == PartitionMode::Noniid {
            need!(
                p.labels_per_client.is_some_and(|k| k >= 1),
                "partition.labels_per_client",
                "required (>= 1) for noniid partitions",
            );
        }

        let t = &self.training;
        need!(t.local_steps >= 1, "training.local_steps", "must be at least 1");
        need!(
            t.learning_rate.is_finite() && t.learning_rate > 0.0,
            "training.learning_rate",
            "must be positive",
        );
        need!(t.batch_size >= 1, "training.batch_size", "must be at least 1");

        need!(
            (0.0..1.0).contains(&self.sparsity.level),
            "sparsity.level",
            "must lie in [0, 1)",
        );

        let a = &self.analysis;
        need!(a.sigma_draws >= 2, "analysis.sigma_draws", "must be at least 2");
        need!(a.beta_max >= 1.0, "analysis.beta_max", "must be at least 1");

        if p.clients >= 1 {
            for (path, spec) in [("channel.uplink", &self.channel.uplink), ("channel.downlink", &self.channel.downlink)] {
                match spec.to_schedule(p.clients) {
                    Ok(s) => {
                        if let Err(err) = s.validate(p.clients, e.rounds) {
                            errs.push(FieldError::new(path, err.to_string()));
                        }
                    }
                    Err(err) => errs.push(FieldError::new(path, err.to_string())),
                }
            }
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(SafariError::Validation(errs))
        }
    }
}
