//! The pool-based simulation: warmstart, then alternate retraining from
//! scratch with acquisition until the labeling budget is spent.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    assign_costs, score_bald, score_lc, score_max_entropy, score_mnlp, score_random, select_batch, AcquisitionFunction,
    AcquisitionScore, BbbMode, BudgetSpec, BudgetUnit,
};
use crate::data::{Dataset, EmbeddingMatrix, Splits, Task, Vocabulary};
use crate::error::{DalError, Result};
use crate::metrics::{aggregate_seeds, CurveSummary};
use crate::models::{encode_examples, evaluate, train, Encoded, Flavor, Model, ModelConfig, TrainConfig};
use crate::seed::{derive_seed, rng_from, tag};
use crate::stochastic::PriorSpec;

const EPS: f64 = 1e-9;

/// Partition of the training ids into labeled and unlabeled sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPool {
    labeled: BTreeSet<usize>,
    unlabeled: BTreeSet<usize>,
    /// Budget cost per example id (1 or its token count).
    costs: std::collections::BTreeMap<usize, usize>,
    /// Token count per example id.
    words: std::collections::BTreeMap<usize, usize>,
    unit: BudgetUnit,
}

impl LabeledPool {
    /// A fully unlabeled pool. `words` gives each id's token count.
    pub fn new(ids: impl IntoIterator<Item = (usize, usize)>, unit: BudgetUnit) -> Self {
        let words: std::collections::BTreeMap<usize, usize> = ids.into_iter().collect();
        let costs = words
            .iter()
            .map(|(&id, &w)| (id, if unit == BudgetUnit::Words { w.max(1) } else { 1 }))
            .collect();
        Self { labeled: BTreeSet::new(), unlabeled: words.keys().copied().collect(), costs, words, unit }
    }

    pub fn unit(&self) -> BudgetUnit {
        self.unit
    }

    pub fn labeled(&self) -> &BTreeSet<usize> {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &BTreeSet<usize> {
        &self.unlabeled
    }

    pub fn cost(&self, id: usize) -> usize {
        self.costs.get(&id).copied().unwrap_or(1)
    }

    /// Moves `ids` to the labeled set.
    pub fn label(&mut self, ids: &[usize]) -> Result<()> {
        for id in ids {
            if !self.unlabeled.remove(id) {
                return Err(DalError::invalid(format!("id {id} is not in the unlabeled pool")));
            }
            self.labeled.insert(*id);
        }
        Ok(())
    }

    pub fn total_units(&self) -> usize {
        self.costs.values().sum()
    }

    pub fn labeled_units(&self) -> usize {
        self.labeled.iter().map(|&id| self.cost(id)).sum()
    }

    pub fn labeled_words(&self) -> usize {
        self.labeled.iter().map(|id| self.words[id]).sum()
    }

    pub fn fraction(&self) -> f64 {
        self.labeled_units() as f64 / self.total_units().max(1) as f64
    }

    fn scores_with_costs(&self, mut scores: Vec<AcquisitionScore>) -> Vec<AcquisitionScore> {
        assign_costs(&mut scores, |id| self.cost(id));
        scores
    }
}

/// Labels uniformly random ids until `fraction` of the pool's budget units
/// is covered, with the same boundary rule as [`select_batch`].
pub fn warmstart(pool: &mut LabeledPool, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DalError::invalid(format!("warmstart fraction must be in (0, 1], got {fraction}")));
    }
    if !pool.labeled.is_empty() {
        return Err(DalError::invalid("warmstart needs a fully unlabeled pool"));
    }
    let amount = budget_target(fraction, pool.total_units()).max(1);
    let ids: Vec<usize> = pool.unlabeled.iter().copied().collect();
    let scores = pool.scores_with_costs(score_random(&ids, seed));
    let picked = select_batch(&scores, BudgetSpec { unit: pool.unit, amount })?;
    pool.label(&picked)?;
    Ok(picked)
}

/// `ceil(fraction * total)`, guarded against floating-point noise.
pub fn budget_target(fraction: f64, total: usize) -> usize {
    ((fraction * total as f64) - EPS).ceil().max(0.0) as usize
}

/// Random validation subset of size `round(f * |V|)` (at least 1), sorted.
pub fn scaled_validation(validation: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DalError::invalid(format!("labeled fraction must be in (0, 1], got {fraction}")));
    }
    if validation.is_empty() {
        return Ok(Vec::new());
    }
    let size = ((fraction * validation.len() as f64).round() as usize).clamp(1, validation.len());
    let mut ids = validation.to_vec();
    ids.shuffle(&mut rng_from(seed));
    ids.truncate(size);
    ids.sort_unstable();
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub acquisition: AcquisitionFunction,
    #[serde(default = "default_fraction")]
    pub warmstart: f64,
    #[serde(default = "default_fraction")]
    pub step: f64,
    #[serde(default = "default_stop")]
    pub stop: f64,
    /// Stochastic passes for the BALD scorers.
    #[serde(default = "default_passes")]
    pub passes: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub bbb_mode: BbbMode,
    /// Prior of the sibling model used by BB-BALD in sibling mode.
    #[serde(default)]
    pub sibling_prior: PriorSpec,
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
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

impl ExperimentConfig {
    pub fn new(model: ModelConfig, acquisition: AcquisitionFunction) -> Self {
        Self {
            model,
            train: TrainConfig::default(),
            acquisition,
            warmstart: default_fraction(),
            step: default_fraction(),
            stop: default_stop(),
            passes: default_passes(),
            seeds: default_seeds(),
            bbb_mode: BbbMode::default(),
            sibling_prior: PriorSpec::default(),
        }
    }

    /// Number of acquisition rounds after the warmstart.
    pub fn acquisition_rounds(&self) -> usize {
        if self.stop <= self.warmstart {
            0
        } else {
            ((self.stop - self.warmstart) / self.step - EPS).ceil() as usize
        }
    }

    /// Cumulative budget fraction targeted by each training run.
    pub fn schedule(&self) -> Vec<f64> {
        (0..=self.acquisition_rounds()).map(|r| (self.warmstart + r as f64 * self.step).min(self.stop)).collect()
    }

    pub fn validate(&self, task: Task) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(self.warmstart > 0.0 && self.warmstart <= self.stop && self.stop <= 1.0) {
            return Err(DalError::config("experiment.warmstart", "need 0 < warmstart <= stop <= 1"));
        }
        if !(self.step > 0.0) {
            return Err(DalError::config("experiment.step", "must be positive"));
        }
        let k = self.acquisition_rounds() as f64;
        if (self.warmstart + k * self.step - self.stop).abs() > 1e-6 {
            return Err(DalError::config(
                "experiment.step",
                format!("warmstart {} plus whole steps of {} never lands on stop {}", self.warmstart, self.step, self.stop),
            ));
        }
        if self.acquisition.is_bald() && self.passes < 2 {
            return Err(DalError::config("experiment.passes", "bald needs at least two passes"));
        }
        if self.seeds.is_empty() {
            return Err(DalError::config("experiment.seeds", "at least one seed is required"));
        }
        if self.model.task() != task {
            return Err(DalError::Incompatible(format!(
                "model `{}` is for {:?} but the data is {:?}",
                self.model.architecture.name(),
                self.model.task(),
                task
            )));
        }
        self.sibling_prior.validate()?;
        self.acquisition.check(task, &self.model.flavor, self.bbb_mode)
    }
}

/// A dataset prepared for simulation: splits, vocabulary, encoded examples.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub dataset: Dataset,
    pub splits: Splits,
    pub vocab: Vocabulary,
    pub embeddings: Option<EmbeddingMatrix>,
    encoded: Vec<Encoded>,
}

impl ExperimentData {
    /// Builds the vocabulary from the training split only.
    pub fn new(dataset: Dataset, splits: Splits) -> Result<Self> {
        let n = dataset.len();
        for &i in splits.train.iter().chain(&splits.validation).chain(&splits.test) {
            if i >= n {
                return Err(DalError::invalid(format!("split index {i} outside dataset of {n} examples")));
            }
        }
        let overlap = |a: &[usize], b: &[usize]| a.iter().any(|i| b.binary_search(i).is_ok());
        let mut sorted = splits.clone();
        sorted.train.sort_unstable();
        sorted.validation.sort_unstable();
        sorted.test.sort_unstable();
        if overlap(&sorted.train, &sorted.validation)
            || overlap(&sorted.train, &sorted.test)
            || overlap(&sorted.validation, &sorted.test)
        {
            return Err(DalError::invalid("train, validation and test splits overlap"));
        }
        if splits.train.is_empty() || splits.test.is_empty() {
            return Err(DalError::invalid("train and test splits must be non-empty"));
        }
        let vocab = Vocabulary::build(
            splits.train.iter().flat_map(|&i| dataset.examples[i].tokens.iter().map(String::as_str)),
            1,
        );
        let encoded = encode_examples(&dataset.examples, &vocab);
        Ok(Self { dataset, splits: sorted, vocab, embeddings: None, encoded })
    }

    pub fn with_embeddings(mut self, embeddings: EmbeddingMatrix) -> Result<Self> {
        if embeddings.matrix.rows() != self.vocab.len() {
            return Err(DalError::Shape(format!(
                "embedding table has {} rows for a vocabulary of {}",
                embeddings.matrix.rows(),
                self.vocab.len()
            )));
        }
        self.embeddings = Some(embeddings);
        Ok(self)
    }

    pub fn task(&self) -> Task {
        self.dataset.task
    }

    fn subset(&self, ids: impl IntoIterator<Item = usize>) -> Vec<Encoded> {
        ids.into_iter().map(|i| self.encoded[i].clone()).collect()
    }

    fn build(&self, config: &ModelConfig, seed: u64) -> Result<Model> {
        Model::build(config, self.vocab.len(), self.dataset.label_names.clone(), self.embeddings.as_ref(), seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub labeled_sentences: usize,
    pub labeled_words: usize,
    /// Labeled share of the pool in the task's budget unit.
    pub labeled_fraction: f64,
    pub target_units: usize,
    pub validation_size: usize,
    pub test_metric: f64,
    pub validation_metric: Option<f64>,
    /// Ids labeled just before this round's training (the warmstart for round 0).
    pub acquired_ids: Vec<usize>,
    pub epochs: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    /// Set when the run stopped early; `rounds` holds what finished.
    pub error: Option<String>,
}

impl SeedRun {
    pub fn curve(&self) -> Vec<(f64, f64)> {
        self.rounds.iter().map(|r| (r.labeled_fraction, r.test_metric)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub acquisition: AcquisitionFunction,
    pub metric_name: String,
    pub runs: Vec<SeedRun>,
    /// Mean curve across seeds; absent when any seed failed.
    pub summary: Option<CurveSummary>,
}

impl ExperimentResult {
    pub fn is_complete(&self) -> bool {
        self.runs.iter().all(|r| r.error.is_none())
    }

    /// Per-seed curve AUCs.
    pub fn seed_aucs(&self) -> Result<Vec<f64>> {
        self.runs.iter().map(|r| crate::metrics::curve_auc(&r.curve())).collect()
    }
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Classification => "accuracy",
        Task::Tagging => "span_f1",
    }
}

/// Runs every seed of `config` (concurrently on the current rayon pool).
pub fn run_experiment(config: &ExperimentConfig, data: &ExperimentData) -> Result<ExperimentResult> {
    config.validate(data.task())?;
    let runs: Vec<SeedRun> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut rounds = Vec::new();
            let error = run_seed(config, data, seed, &mut rounds).err().map(|e| e.to_string());
            SeedRun { seed, rounds, error }
        })
        .collect();
    let summary = if runs.iter().all(|r| r.error.is_none()) {
        Some(aggregate_seeds(&runs.iter().map(SeedRun::curve).collect::<Vec<_>>())?)
    } else {
        None
    };
    Ok(ExperimentResult { acquisition: config.acquisition, metric_name: metric_name(data.task()).into(), runs, summary })
}

/// One seed of the protocol. Records are pushed as rounds finish so that a
/// failure leaves the completed rounds behind.
pub fn run_seed(config: &ExperimentConfig, data: &ExperimentData, seed: u64, out: &mut Vec<RoundRecord>) -> Result<()> {
    let unit = BudgetUnit::for_task(data.task());
    let mut pool =
        LabeledPool::new(data.splits.train.iter().map(|&i| (i, data.dataset.examples[i].tokens.len())), unit);
    let total = pool.total_units();
    let mut acquired = warmstart(&mut pool, config.warmstart, derive_seed(seed, tag("warmstart")))?;
    let test = data.subset(data.splits.test.iter().copied());
    let schedule = config.schedule();
    for (round, &target_fraction) in schedule.iter().enumerate() {
        let started = Instant::now();
        let round_seed = derive_seed(seed, round as u64);
        let labeled = data.subset(pool.labeled().iter().copied());
        let val_ids =
            scaled_validation(&data.splits.validation, pool.fraction().min(1.0), derive_seed(round_seed, tag("validation")))?;
        let validation = data.subset(val_ids.iter().copied());
        let train_cfg = TrainConfig { seed: derive_seed(round_seed, tag("train")), ..config.train.clone() };
        let mut model = data.build(&config.model, derive_seed(round_seed, tag("init")))?;
        let report = train(&mut model, &labeled, &validation, &train_cfg)?;
        let test_metric = evaluate(&model, &test)?.metric;
        let validation_metric = if validation.is_empty() { None } else { Some(evaluate(&model, &validation)?.metric) };

        let next = schedule.get(round + 1);
        let mut record = RoundRecord {
            round,
            labeled_sentences: pool.labeled().len(),
            labeled_words: pool.labeled_words(),
            labeled_fraction: pool.fraction(),
            target_units: budget_target(target_fraction, total),
            validation_size: validation.len(),
            test_metric,
            validation_metric,
            acquired_ids: std::mem::take(&mut acquired),
            epochs: report.epochs,
            wall_ms: 0,
        };
        if let Some(&next_fraction) = next {
            if pool.unlabeled().is_empty() {
                return Err(DalError::invalid("unlabeled pool exhausted before the stop fraction"));
            }
            let amount = budget_target(next_fraction, total).saturating_sub(pool.labeled_units()).max(1);
            let scores = score_pool(config, data, &pool, &model, &train_cfg, &labeled, &validation, round_seed)?;
            acquired = select_batch(&pool.scores_with_costs(scores), BudgetSpec { unit, amount })?;
            pool.label(&acquired)?;
        }
        record.wall_ms = started.elapsed().as_millis() as u64;
        log::info!(
            "{} seed {seed} round {round}: fraction {:.4} metric {:.4}",
            config.acquisition.name(),
            record.labeled_fraction,
            record.test_metric
        );
        out.push(record);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn score_pool(
    config: &ExperimentConfig,
    data: &ExperimentData,
    pool: &LabeledPool,
    model: &Model,
    train_cfg: &TrainConfig,
    labeled: &[Encoded],
    validation: &[Encoded],
    round_seed: u64,
) -> Result<Vec<AcquisitionScore>> {
    let ids: Vec<usize> = pool.unlabeled().iter().copied().collect();
    let candidates = || data.subset(ids.iter().copied());
    let ensemble_seed = derive_seed(round_seed, tag("ensemble"));
    match config.acquisition {
        AcquisitionFunction::Random => Ok(score_random(&ids, derive_seed(round_seed, tag("random")))),
        AcquisitionFunction::LeastConfidence => score_lc(&ids, &model.predict_proba(&candidates())?),
        AcquisitionFunction::MaxEntropy => score_max_entropy(&ids, &model.predict_proba(&candidates())?),
        AcquisitionFunction::Mnlp => score_mnlp(&ids, &model.predict_proba(&candidates())?),
        AcquisitionFunction::DoBald => score_bald(&ids, &model.stochastic_ensemble(&candidates(), config.passes, ensemble_seed)?),
        AcquisitionFunction::BbBald => match config.bbb_mode {
            BbbMode::SelfModel => {
                score_bald(&ids, &model.stochastic_ensemble(&candidates(), config.passes, ensemble_seed)?)
            }
            BbbMode::Sibling => {
                let sibling_cfg = config.model.with_flavor(Flavor::BayesByBackprop { prior: config.sibling_prior });
                let mut sibling = data.build(&sibling_cfg, derive_seed(round_seed, tag("sibling")))?;
                train(&mut sibling, labeled, validation, train_cfg)?;
                score_bald(&ids, &sibling.stochastic_ensemble(&candidates(), config.passes, ensemble_seed)?)
            }
        },
    }
}
