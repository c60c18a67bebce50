//! Datasets: loaders, vocabulary, embeddings and synthetic generators.

mod embeddings;
mod formats;
mod synthetic;
mod vocab;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use embeddings::{embeddings_from_text, load_embeddings, parse_embedding_file, random_embeddings, EmbeddingMatrix, OOV_INIT};
pub use formats::{
    format_column, format_delimited, load_column_format, load_delimited_classification, parse_column_format,
    parse_delimited_classification, write_column_format, write_delimited_classification, DelimitedOptions,
};
pub(crate) use formats::write_file;
pub use synthetic::{
    ClassificationMetadata, EntityPool, SyntheticClassificationSpec, SyntheticTaggingSpec, TaggingMetadata, Template,
};
pub use vocab::{Vocabulary, PAD, PAD_INDEX, UNK, UNK_INDEX};

use crate::error::{DalError, Result};
use crate::seed::rng_from;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassificationExample {
    pub id: usize,
    pub tokens: Vec<String>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedExample {
    pub id: usize,
    pub tokens: Vec<String>,
    pub tags: Vec<usize>,
}

/// Tag inventory. `O` (when present) is index 0; the rest are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    names: Vec<String>,
}

impl TagSet {
    pub fn from_tags<'a>(tags: impl IntoIterator<Item = &'a str>) -> Self {
        let mut names: Vec<String> = tags.into_iter().map(str::to_owned).collect();
        names.sort_by(|a, b| (a != "O").cmp(&(b != "O")).then_with(|| a.cmp(b)));
        names.dedup();
        Self { names }
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedCorpus {
    pub examples: Vec<TaggedExample>,
    pub tags: TagSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Classification,
    Tagging,
}

/// One training/evaluation item. Classification examples carry a single
/// label; tagged examples carry one label per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: usize,
    pub tokens: Vec<String>,
    pub labels: Vec<usize>,
}

impl Example {
    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub examples: Vec<Example>,
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn from_classification(examples: Vec<ClassificationExample>) -> Result<Self> {
        if examples.is_empty() {
            return Err(DalError::invalid("classification dataset is empty"));
        }
        let classes = examples.iter().map(|e| e.label).max().unwrap_or(0) + 1;
        let examples = examples
            .into_iter()
            .enumerate()
            .map(|(i, e)| Example { id: i, tokens: e.tokens, labels: vec![e.label] })
            .collect();
        Ok(Self { task: Task::Classification, examples, label_names: (0..classes.max(2)).map(|c| c.to_string()).collect() })
    }

    pub fn from_tagged(corpus: TaggedCorpus) -> Result<Self> {
        if corpus.examples.is_empty() {
            return Err(DalError::invalid("tagged corpus is empty"));
        }
        let examples = corpus
            .examples
            .into_iter()
            .enumerate()
            .map(|(i, e)| Example { id: i, tokens: e.tokens, labels: e.tags })
            .collect();
        Ok(Self { task: Task::Tagging, examples, label_names: corpus.tags.names().to_vec() })
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Concatenates datasets of the same task, renumbering ids. Tag indices are
    /// remapped onto the union tag set.
    pub fn concat(parts: Vec<Dataset>) -> Result<(Dataset, Vec<std::ops::Range<usize>>)> {
        let task = parts.first().ok_or_else(|| DalError::invalid("nothing to concatenate"))?.task;
        if parts.iter().any(|p| p.task != task) {
            return Err(DalError::invalid("cannot mix classification and tagging data"));
        }
        let label_names: Vec<String> = match task {
            Task::Classification => {
                let n = parts.iter().map(|p| p.num_classes()).max().unwrap_or(2);
                (0..n).map(|c| c.to_string()).collect()
            }
            Task::Tagging => {
                TagSet::from_tags(parts.iter().flat_map(|p| p.label_names.iter().map(String::as_str))).names().to_vec()
            }
        };
        let mut examples = Vec::new();
        let mut ranges = Vec::new();
        for p in parts {
            let start = examples.len();
            let remap: Vec<usize> = p
                .label_names
                .iter()
                .map(|n| label_names.iter().position(|m| m == n).expect("union contains every label"))
                .collect();
            for e in p.examples {
                let labels = e.labels.iter().map(|&l| remap[l]).collect();
                examples.push(Example { id: examples.len(), tokens: e.tokens, labels });
            }
            ranges.push(start..examples.len());
        }
        Ok((Dataset { task, examples, label_names }, ranges))
    }

    pub fn to_tagged_corpus(&self) -> Option<TaggedCorpus> {
        (self.task == Task::Tagging).then(|| TaggedCorpus {
            examples: self
                .examples
                .iter()
                .map(|e| TaggedExample { id: e.id, tokens: e.tokens.clone(), tags: e.labels.clone() })
                .collect(),
            tags: TagSet { names: self.label_names.clone() },
        })
    }
}

/// Example indices for the three partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle split with the given train/validation fractions; the rest is test.
pub fn seeded_split(n: usize, train: f64, validation: f64, seed: u64) -> Result<Splits> {
    if train <= 0.0 || validation < 0.0 || train + validation > 1.0 {
        return Err(DalError::invalid(format!("bad split fractions {train}/{validation}")));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng_from(seed));
    let n_train = (train * n as f64).round() as usize;
    let n_val = ((validation * n as f64).round() as usize).min(n - n_train);
    let mut train_ids = ids[..n_train].to_vec();
    let mut val_ids = ids[n_train..n_train + n_val].to_vec();
    let mut test_ids = ids[n_train + n_val..].to_vec();
    train_ids.sort_unstable();
    val_ids.sort_unstable();
    test_ids.sort_unstable();
    Ok(Splits { train: train_ids, validation: val_ids, test: test_ids })
}
