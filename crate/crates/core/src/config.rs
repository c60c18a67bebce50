//! Run configuration files and dataset resolution.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionFunction, BbbMode};
use crate::al_loop::{ExperimentConfig, ExperimentData};
use crate::data::{
    load_column_format, load_delimited_classification, load_embeddings, seeded_split, Dataset, DelimitedOptions,
    Splits, SyntheticClassificationSpec, SyntheticTaggingSpec,
};
use crate::error::{DalError, Result};
use crate::models::{Architecture, ModelConfig, TrainConfig};
use crate::stochastic::PriorSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeskTagging {
    pub num_sentences: usize,
    #[serde(default = "default_rare")]
    pub rare_frequency: f64,
    pub seed: u64,
}

fn default_rare() -> f64 {
    0.02
}

/// Where examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    SyntheticClassification { spec: SyntheticClassificationSpec },
    /// The built-in four-entity template corpus.
    DeskTagging(DeskTagging),
    SyntheticTagging { spec: SyntheticTaggingSpec },
    /// `label<delim>text` lines. Separate validation/test files are optional.
    Delimited {
        path: PathBuf,
        #[serde(default = "default_delimiter")]
        delimiter: char,
        #[serde(default)]
        lowercase: bool,
        #[serde(default)]
        validation_path: Option<PathBuf>,
        #[serde(default)]
        test_path: Option<PathBuf>,
    },
    /// Token-per-line column files with blank lines between sentences.
    Column {
        path: PathBuf,
        #[serde(default)]
        validation_path: Option<PathBuf>,
        #[serde(default)]
        test_path: Option<PathBuf>,
    },
}

fn default_delimiter() -> char {
    '\t'
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_train")]
    pub train: f64,
    #[serde(default = "default_validation")]
    pub validation: f64,
}

fn default_train() -> f64 {
    0.8
}
fn default_validation() -> f64 {
    0.1
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { seed: 0, train: default_train(), validation: default_validation() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Used when the source does not ship its own splits.
    #[serde(default)]
    pub split: SplitConfig,
    /// Pretrained vectors, one `token v1 ... vd` per line.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    /// Seed for embedding rows missing from the pretrained file.
    #[serde(default)]
    pub embedding_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    /// Used when there is no `[matrix]` section.
    #[serde(default)]
    pub acquisition: Option<AcquisitionFunction>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_fraction")]
    pub warmstart: f64,
    #[serde(default = "default_fraction")]
    pub step: f64,
    #[serde(default = "default_stop")]
    pub stop: f64,
    #[serde(default = "default_passes")]
    pub passes: usize,
    #[serde(default)]
    pub bbb_mode: BbbMode,
    #[serde(default)]
    pub sibling_prior: PriorSpec,
    /// Write real per-round timings into `rounds.csv` (off keeps reruns byte-identical).
    #[serde(default)]
    pub record_timing: bool,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn default_fraction() -> f64 {
    0.02
}
fn default_stop() -> f64 {
    0.5
}
fn default_passes() -> usize {
    25
}

/// Cross product of acquisition functions and architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSection {
    pub acquisition: Vec<AcquisitionFunction>,
    /// Defaults to the `[model]` architecture.
    #[serde(default)]
    pub architecture: Vec<Architecture>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentSection,
    pub data: DataConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub matrix: Option<MatrixSection>,
}

/// One cell of the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRun {
    pub name: String,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| DalError::Config { field: origin.to_owned(), message: e.to_string() })
    }

    /// Reads a TOML config, or the resolved config inside a run manifest.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DalError::io(path, e))?;
        let mut config = if path.extension().is_some_and(|e| e == "json") {
            let manifest: serde_json::Value = serde_json::from_str(&text).map_err(|e| DalError::Serde(e.to_string()))?;
            let inner = manifest
                .get("config")
                .ok_or_else(|| DalError::config("config", format!("{} has no `config` entry", path.display())))?;
            serde_json::from_value(inner.clone()).map_err(|e| DalError::config("config", e.to_string()))?
        } else {
            Self::parse(&text, &path.display().to_string())?
        };
        if let Some(dir) = path.parent() {
            config.data.resolve_paths(dir);
        }
        Ok(config)
    }

    /// Expands the matrix into concrete experiments and checks each one.
    pub fn plan(&self, data: &ExperimentData) -> Result<Vec<PlannedRun>> {
        let (acquisitions, architectures) = match &self.matrix {
            Some(m) => {
                if m.acquisition.is_empty() {
                    return Err(DalError::config("matrix.acquisition", "must list at least one function"));
                }
                let arch = if m.architecture.is_empty() { vec![self.model.architecture] } else { m.architecture.clone() };
                (m.acquisition.clone(), arch)
            }
            None => {
                let a = self.experiment.acquisition.ok_or_else(|| {
                    DalError::config("experiment.acquisition", "required when there is no [matrix] section")
                })?;
                (vec![a], vec![self.model.architecture])
            }
        };
        let mut runs = Vec::new();
        for &arch in &architectures {
            for &acq in &acquisitions {
                let model = ModelConfig { architecture: arch, ..self.model.clone() };
                let e = &self.experiment;
                let experiment = ExperimentConfig {
                    model,
                    train: self.train.clone(),
                    acquisition: acq,
                    warmstart: e.warmstart,
                    step: e.step,
                    stop: e.stop,
                    passes: e.passes,
                    seeds: e.seeds.clone(),
                    bbb_mode: e.bbb_mode,
                    sibling_prior: e.sibling_prior,
                };
                experiment.validate(data.task())?;
                let name =
                    if architectures.len() > 1 { format!("{}-{}", arch.name(), acq.name()) } else { acq.name().to_owned() };
                runs.push(PlannedRun { name, experiment });
            }
        }
        Ok(runs)
    }
}

impl DataConfig {
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                let joined = base.join(&*p);
                *p = std::path::absolute(&joined).unwrap_or(joined);
            }
        };
        match &mut self.source {
            DataSource::Delimited { path, validation_path, test_path, .. }
            | DataSource::Column { path, validation_path, test_path } => {
                fix(path);
                validation_path.iter_mut().for_each(fix);
                test_path.iter_mut().for_each(fix);
            }
            _ => {}
        }
        if let Some(p) = &mut self.embeddings {
            fix(p);
        }
    }

    /// Loads or generates the dataset and fixes its splits.
    pub fn load(&self) -> Result<ExperimentData> {
        let split = |n: usize| seeded_split(n, self.split.train, self.split.validation, self.split.seed);
        let (dataset, splits) = match &self.source {
            DataSource::SyntheticClassification { spec } => {
                let ds = Dataset::from_classification(spec.generate()?.0)?;
                let s = split(ds.len())?;
                (ds, s)
            }
            DataSource::DeskTagging(d) => {
                let ds = Dataset::from_tagged(
                    SyntheticTaggingSpec::desk_default(d.num_sentences, d.rare_frequency, d.seed).generate()?.0,
                )?;
                let s = split(ds.len())?;
                (ds, s)
            }
            DataSource::SyntheticTagging { spec } => {
                let ds = Dataset::from_tagged(spec.generate()?.0)?;
                let s = split(ds.len())?;
                (ds, s)
            }
            DataSource::Delimited { path, delimiter, lowercase, validation_path, test_path } => {
                let opts = DelimitedOptions { delimiter: *delimiter, lowercase: *lowercase };
                let load = |p: &PathBuf| Dataset::from_classification(load_delimited_classification(p, opts)?);
                shipped_or_split(load(path)?, validation_path.as_ref().map(load), test_path.as_ref().map(load), split)?
            }
            DataSource::Column { path, validation_path, test_path } => {
                let load = |p: &PathBuf| Dataset::from_tagged(load_column_format(p)?);
                shipped_or_split(load(path)?, validation_path.as_ref().map(load), test_path.as_ref().map(load), split)?
            }
        };
        let data = ExperimentData::new(dataset, splits)?;
        match &self.embeddings {
            Some(path) => {
                let emb = load_embeddings(path, &data.vocab, self.embedding_seed)?;
                data.with_embeddings(emb)
            }
            None => Ok(data),
        }
    }
}

/// Uses shipped validation/test files when both exist, otherwise splits `train`.
fn shipped_or_split(
    train: Dataset,
    validation: Option<Result<Dataset>>,
    test: Option<Result<Dataset>>,
    split: impl Fn(usize) -> Result<Splits>,
) -> Result<(Dataset, Splits)> {
    match (validation, test) {
        (Some(v), Some(t)) => {
            let (ds, ranges) = Dataset::concat(vec![train, v?, t?])?;
            let splits = Splits {
                train: ranges[0].clone().collect(),
                validation: ranges[1].clone().collect(),
                test: ranges[2].clone().collect(),
            };
            Ok((ds, splits))
        }
        (None, None) => {
            let s = split(train.len())?;
            Ok((train, s))
        }
        _ => Err(DalError::config("data.source", "give both validation_path and test_path, or neither")),
    }
}
