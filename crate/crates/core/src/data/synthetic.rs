//! Seeded synthetic corpora for desk-scale experiments.
//!
//! Both generators are pure functions of their spec: the same spec always
//! produces the same corpus.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{ClassificationExample, TagSet, TaggedCorpus, TaggedExample};
use crate::error::{DalError, Result};
use crate::seed::{rng_from, Rng};

fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-exponent)).collect()
}

/// Splits `n` into counts proportional to `shares` (largest remainder,
/// ties to the lower index).
fn allocate(shares: &[f64], n: usize) -> Vec<usize> {
    let exact: Vec<f64> = shares.iter().map(|s| s * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle().take(short) {
        counts[i] += 1;
    }
    counts
}

fn weighted(weights: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights).map_err(|e| DalError::invalid(format!("invalid weights: {e}")))
}

/// Sentences over a vocabulary where each class owns a disjoint set of
/// signal tokens and all classes share the remaining background tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticClassificationSpec {
    pub num_examples: usize,
    pub num_classes: usize,
    pub vocab_size: usize,
    /// Probability that a slot holds a signal token of the sentence's class.
    pub signal_strength: f64,
    pub seed: u64,
    /// Defaults to a quarter of the vocabulary split evenly across classes.
    #[serde(default)]
    pub signal_tokens_per_class: Option<usize>,
    #[serde(default = "default_min_length")]
    pub min_length: usize,
    #[serde(default = "default_max_length")]
    pub max_length: usize,
    /// Relative class prevalence; uniform when absent.
    #[serde(default)]
    pub class_weights: Option<Vec<f64>>,
    /// Exponent of the Zipf law used to pick signal and background tokens.
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
}

fn default_min_length() -> usize {
    8
}
fn default_max_length() -> usize {
    14
}
fn default_zipf() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetadata {
    pub seed: u64,
    /// Accuracy of the optimal classifier: a sentence with any signal token
    /// is decided by it, otherwise the most prevalent class is guessed.
    pub bayes_accuracy: f64,
    pub class_counts: Vec<usize>,
    pub signal_tokens: Vec<Vec<String>>,
}

impl SyntheticClassificationSpec {
    pub fn new(num_examples: usize, num_classes: usize, vocab_size: usize, signal_strength: f64, seed: u64) -> Self {
        Self {
            num_examples,
            num_classes,
            vocab_size,
            signal_strength,
            seed,
            signal_tokens_per_class: None,
            min_length: default_min_length(),
            max_length: default_max_length(),
            class_weights: None,
            zipf_exponent: default_zipf(),
        }
    }

    fn per_class(&self) -> usize {
        self.signal_tokens_per_class.unwrap_or((self.vocab_size / (4 * self.num_classes.max(1))).max(1))
    }

    fn priors(&self) -> Vec<f64> {
        let w = self.class_weights.clone().unwrap_or_else(|| vec![1.0; self.num_classes]);
        let total: f64 = w.iter().sum();
        w.iter().map(|x| x / total).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_strength > 0.0 && self.signal_strength <= 1.0) {
            return Err(DalError::invalid(format!("signal strength must be in (0, 1], got {}", self.signal_strength)));
        }
        if self.num_classes < 2 {
            return Err(DalError::invalid("need at least 2 classes"));
        }
        if self.num_classes * self.per_class() >= self.vocab_size {
            return Err(DalError::invalid(format!(
                "vocabulary of {} cannot hold {} disjoint signal sets of {} plus background tokens",
                self.vocab_size,
                self.num_classes,
                self.per_class()
            )));
        }
        if self.min_length == 0 || self.min_length > self.max_length {
            return Err(DalError::invalid("sentence lengths must satisfy 1 <= min <= max"));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.num_classes || w.iter().any(|&x| x.is_nan() || x <= 0.0) {
                return Err(DalError::invalid("class weights must be positive, one per class"));
            }
        }
        Ok(())
    }

    /// Exact accuracy of the Bayes-optimal classifier under this spec.
    pub fn bayes_accuracy(&self) -> f64 {
        let lens = self.max_length - self.min_length + 1;
        let p_none: f64 = (self.min_length..=self.max_length)
            .map(|l| (1.0 - self.signal_strength).powi(l as i32))
            .sum::<f64>()
            / lens as f64;
        let best = allocate(&self.priors(), self.num_examples).into_iter().max().unwrap_or(0) as f64 / self.num_examples.max(1) as f64;
        1.0 - p_none * (1.0 - best)
    }

    pub fn generate(&self) -> Result<(Vec<ClassificationExample>, ClassificationMetadata)> {
        self.validate()?;
        let mut rng = rng_from(self.seed);
        let mut vocab: Vec<String> = (0..self.vocab_size).map(|i| format!("w{i}")).collect();
        vocab.shuffle(&mut rng);
        let per_class = self.per_class();
        let signal: Vec<Vec<String>> =
            (0..self.num_classes).map(|c| vocab[c * per_class..(c + 1) * per_class].to_vec()).collect();
        let background = &vocab[self.num_classes * per_class..];

        let class_counts = allocate(&self.priors(), self.num_examples);
        let mut labels: Vec<usize> = class_counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        labels.shuffle(&mut rng);
        let signal_dist = weighted(&zipf_weights(per_class, self.zipf_exponent))?;
        let background_dist = weighted(&zipf_weights(background.len(), self.zipf_exponent))?;
        let mut examples = Vec::with_capacity(self.num_examples);
        for (id, label) in labels.into_iter().enumerate() {
            let len = rng.random_range(self.min_length..=self.max_length);
            let tokens = (0..len)
                .map(|_| {
                    if rng.random::<f64>() < self.signal_strength {
                        signal[label][signal_dist.sample(&mut rng)].clone()
                    } else {
                        background[background_dist.sample(&mut rng)].clone()
                    }
                })
                .collect();
            examples.push(ClassificationExample { id, tokens, label });
        }
        let meta = ClassificationMetadata { seed: self.seed, bayes_accuracy: self.bayes_accuracy(), class_counts, signal_tokens: signal };
        Ok((examples, meta))
    }
}

/// A named pool of fillers for template slots. Entries may span several
/// whitespace-separated tokens. Pools of type `O` produce untagged words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityPool {
    pub name: String,
    pub entity_type: String,
    pub entries: Vec<String>,
}

/// A sentence pattern such as `"{PER} works at {ORG}"`; `{name}` refers to a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub pattern: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaggingSpec {
    pub num_sentences: usize,
    pub templates: Vec<Template>,
    pub pools: Vec<EntityPool>,
    pub seed: u64,
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggingMetadata {
    pub seed: u64,
    /// Sentences generated from each template, in template order.
    pub template_counts: Vec<usize>,
    pub template_of: Vec<usize>,
}

enum Slot<'a> {
    Word(&'a str),
    Pool(usize),
}

impl SyntheticTaggingSpec {
    /// A four-entity corpus whose last template (with the only `MISC`
    /// entities) appears with probability `rare_frequency`.
    pub fn desk_default(num_sentences: usize, rare_frequency: f64, seed: u64) -> Self {
        let pool = |name: &str, ty: &str, n: usize| EntityPool {
            name: name.into(),
            entity_type: ty.into(),
            entries: (0..n)
                .map(|i| if i % 5 == 4 { format!("{}{i} {}{}", name.to_lowercase(), name.to_lowercase(), i + 100) } else { format!("{}{i}", name.to_lowercase()) })
                .collect(),
        };
        let common = (1.0 - rare_frequency) / 4.0;
        Self {
            num_sentences,
            templates: vec![
                Template { pattern: "{PER} works at {ORG} {FILL}".into(), weight: common },
                Template { pattern: "{FILL} {PER} moved to {LOC}".into(), weight: common },
                Template { pattern: "the {ORG} office in {LOC} hired {PER}".into(), weight: common },
                Template { pattern: "{FILL} {FILL} said {PER} {FILL}".into(), weight: common },
                Template { pattern: "{PER} won the {MISC} prize in {LOC}".into(), weight: rare_frequency },
            ],
            pools: vec![
                pool("PER", "PER", 80),
                pool("ORG", "ORG", 60),
                pool("LOC", "LOC", 60),
                pool("MISC", "MISC", 20),
                EntityPool { name: "FILL".into(), entity_type: "O".into(), entries: (0..40).map(|i| format!("fill{i}")).collect() },
            ],
            seed,
            zipf_exponent: default_zipf(),
        }
    }

    fn compile(&self) -> Result<Vec<Vec<Slot<'_>>>> {
        if self.templates.is_empty() {
            return Err(DalError::invalid("template set is empty"));
        }
        let by_name: BTreeMap<&str, usize> = self.pools.iter().enumerate().map(|(i, p)| (p.name.as_str(), i)).collect();
        for p in &self.pools {
            if p.entries.is_empty() || p.entries.iter().any(|e| e.split_whitespace().next().is_none()) {
                return Err(DalError::invalid(format!("pool `{}` has no usable entries", p.name)));
            }
        }
        self.templates
            .iter()
            .map(|t| {
                if !(t.weight > 0.0) {
                    return Err(DalError::invalid(format!("template `{}` needs a positive weight", t.pattern)));
                }
                let slots: Vec<Slot<'_>> = t
                    .pattern
                    .split_whitespace()
                    .map(|w| match w.strip_prefix('{').and_then(|w| w.strip_suffix('}')) {
                        Some(name) => by_name
                            .get(name)
                            .map(|&i| Slot::Pool(i))
                            .ok_or_else(|| DalError::invalid(format!("unknown pool `{name}` in `{}`", t.pattern))),
                        None => Ok(Slot::Word(w)),
                    })
                    .collect::<Result<_>>()?;
                if slots.is_empty() {
                    return Err(DalError::invalid("empty template pattern"));
                }
                Ok(slots)
            })
            .collect()
    }

    pub fn generate(&self) -> Result<(TaggedCorpus, TaggingMetadata)> {
        let compiled = self.compile()?;
        let mut rng: Rng = rng_from(self.seed);
        let template_dist = weighted(&self.templates.iter().map(|t| t.weight).collect::<Vec<_>>())?;
        let pool_dists: Vec<WeightedIndex<f64>> = self
            .pools
            .iter()
            .map(|p| weighted(&zipf_weights(p.entries.len(), self.zipf_exponent)))
            .collect::<Result<_>>()?;

        let mut template_counts = vec![0; self.templates.len()];
        let mut template_of = Vec::with_capacity(self.num_sentences);
        let mut sentences: Vec<(Vec<String>, Vec<String>)> = Vec::with_capacity(self.num_sentences);
        for _ in 0..self.num_sentences {
            let t = template_dist.sample(&mut rng);
            template_counts[t] += 1;
            template_of.push(t);
            let mut tokens = Vec::new();
            let mut names = Vec::new();
            for slot in &compiled[t] {
                match slot {
                    Slot::Word(w) => {
                        tokens.push((*w).to_owned());
                        names.push("O".to_owned());
                    }
                    Slot::Pool(p) => {
                        let pool = &self.pools[*p];
                        let entry = &pool.entries[pool_dists[*p].sample(&mut rng)];
                        for (k, w) in entry.split_whitespace().enumerate() {
                            tokens.push(w.to_owned());
                            names.push(match (pool.entity_type.as_str(), k) {
                                ("O", _) => "O".to_owned(),
                                (ty, 0) => format!("B-{ty}"),
                                (ty, _) => format!("I-{ty}"),
                            });
                        }
                    }
                }
            }
            sentences.push((tokens, names));
        }
        // Only tags that occur, as a file loader would see them.
        let tags = TagSet::from_tags(sentences.iter().flat_map(|(_, n)| n.iter().map(String::as_str)));
        let examples = sentences
            .into_iter()
            .enumerate()
            .map(|(id, (tokens, names))| {
                let tag_ids = names.iter().map(|n| tags.index(n).expect("tag set built from these names")).collect();
                TaggedExample { id, tokens, tags: tag_ids }
            })
            .collect();
        Ok((TaggedCorpus { examples, tags }, TaggingMetadata { seed: self.seed, template_counts, template_of }))
    }
}
