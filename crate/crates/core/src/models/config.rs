use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{DalError, Result};
use crate::stochastic::PriorSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Mean of token embeddings followed by an MLP.
    AvgEmbedMlp,
    /// 1-D convolution over embeddings, max-over-time pooling, MLP.
    ConvClassifier,
    /// Per-token MLP over the concatenated embeddings of a ±k window.
    WindowTagger,
    /// Elman recurrence over embeddings with a per-token output layer.
    RecurrentTagger,
}

impl Architecture {
    pub fn task(self) -> Task {
        match self {
            Architecture::AvgEmbedMlp | Architecture::ConvClassifier => Task::Classification,
            Architecture::WindowTagger | Architecture::RecurrentTagger => Task::Tagging,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::AvgEmbedMlp => "avg-embed-mlp",
            Architecture::ConvClassifier => "conv-classifier",
            Architecture::WindowTagger => "window-tagger",
            Architecture::RecurrentTagger => "recurrent-tagger",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Flavor {
    Deterministic,
    /// Inverted dropout on the inputs of every stochastic layer. Recurrent
    /// layers reuse one mask per sequence.
    Dropout { rate: f64 },
    /// Diagonal-Gaussian weights on every stochastic layer.
    BayesByBackprop {
        #[serde(default)]
        prior: PriorSpec,
    },
}

impl Flavor {
    pub fn is_stochastic(&self) -> bool {
        !matches!(self, Flavor::Deterministic)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Flavor::Deterministic => "deterministic",
            Flavor::Dropout { .. } => "dropout",
            Flavor::BayesByBackprop { .. } => "bayes-by-backprop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Hidden layer widths. For the convolutional classifier the first entry
    /// is the number of filters; for the recurrent tagger it is the state size.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_flavor")]
    pub flavor: Flavor,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_true")]
    pub trainable_embeddings: bool,
    /// Context radius k of the window tagger (window covers 2k + 1 tokens).
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_conv_width")]
    pub conv_width: usize,
    #[serde(default)]
    pub activation: Activation,
    /// Also make the output projection stochastic.
    #[serde(default)]
    pub stochastic_output: bool,
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}
fn default_flavor() -> Flavor {
    Flavor::Dropout { rate: 0.5 }
}
fn default_embedding_dim() -> usize {
    32
}
fn default_true() -> bool {
    true
}
fn default_window() -> usize {
    1
}
fn default_conv_width() -> usize {
    3
}

impl ModelConfig {
    pub fn new(architecture: Architecture, flavor: Flavor) -> Self {
        Self {
            architecture,
            hidden: default_hidden(),
            flavor,
            embedding_dim: default_embedding_dim(),
            trainable_embeddings: true,
            window: default_window(),
            conv_width: default_conv_width(),
            activation: Activation::Tanh,
            stochastic_output: false,
        }
    }

    pub fn task(&self) -> Task {
        self.architecture.task()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(DalError::config("model.hidden", "hidden sizes must be a non-empty list of positive integers"));
        }
        if self.embedding_dim == 0 {
            return Err(DalError::config("model.embedding_dim", "must be positive"));
        }
        if self.architecture == Architecture::ConvClassifier && self.conv_width == 0 {
            return Err(DalError::config("model.conv_width", "must be positive"));
        }
        match self.flavor {
            Flavor::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                Err(DalError::config("model.flavor.rate", format!("dropout rate must be in [0, 1), got {rate}")))
            }
            Flavor::BayesByBackprop { prior } => {
                prior.validate().map_err(|e| DalError::config("model.flavor.prior", e.to_string()))
            }
            _ => Ok(()),
        }
    }

    /// Same architecture with a different flavor.
    pub fn with_flavor(&self, flavor: Flavor) -> Self {
        Self { flavor, ..self.clone() }
    }
}

/// Early-stopping training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_cap")]
    pub batch_cap: usize,
    #[serde(default = "default_min_updates")]
    pub min_updates: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_epochs() -> usize {
    25
}
fn default_patience() -> usize {
    1
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch_cap() -> usize {
    50
}
fn default_min_updates() -> usize {
    10
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            learning_rate: default_lr(),
            batch_cap: default_batch_cap(),
            min_updates: default_min_updates(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(DalError::config("train.max_epochs", "must be positive"));
        }
        if self.batch_cap == 0 || self.min_updates == 0 {
            return Err(DalError::config("train.batch_cap", "batch cap and min updates must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(DalError::config("train.learning_rate", "must be positive"));
        }
        Ok(())
    }

    /// Largest batch up to `cap` that still gives `min_updates` updates per epoch.
    pub fn batch_size(&self, n: usize) -> usize {
        effective_batch_size(n, self.batch_cap, self.min_updates)
    }
}

pub fn effective_batch_size(n: usize, cap: usize, min_updates: usize) -> usize {
    cap.min(n / min_updates.max(1)).max(1)
}
