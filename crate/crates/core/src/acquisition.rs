//! Acquisition functions and budget-aware batch selection.
//!
//! Every scorer is oriented so that a higher score means "label this first".
//! Among equal scores the lower `tiebreak` wins, then the lower id.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{DalError, Result};
use crate::models::{argmax, Flavor};
use crate::seed::rng_from;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcquisitionFunction {
    Random,
    #[serde(rename = "lc")]
    LeastConfidence,
    Mnlp,
    DoBald,
    BbBald,
    /// Entropy of the predictive distribution. Not one of the compared
    /// baselines; offered as an extra.
    MaxEntropy,
}

/// Which model produces the BB-BALD ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BbbMode {
    /// The trained (and evaluated) model is itself Bayes-by-Backprop.
    SelfModel,
    /// A Bayes-by-Backprop copy is trained alongside and used only for scoring.
    #[default]
    Sibling,
}

impl AcquisitionFunction {
    pub const ALL: [AcquisitionFunction; 6] = [
        AcquisitionFunction::Random,
        AcquisitionFunction::LeastConfidence,
        AcquisitionFunction::Mnlp,
        AcquisitionFunction::DoBald,
        AcquisitionFunction::BbBald,
        AcquisitionFunction::MaxEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AcquisitionFunction::Random => "random",
            AcquisitionFunction::LeastConfidence => "lc",
            AcquisitionFunction::Mnlp => "mnlp",
            AcquisitionFunction::DoBald => "do-bald",
            AcquisitionFunction::BbBald => "bb-bald",
            AcquisitionFunction::MaxEntropy => "max-entropy",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| DalError::invalid(format!("unknown acquisition function `{name}`")))
    }

    pub fn is_bald(self) -> bool {
        matches!(self, AcquisitionFunction::DoBald | AcquisitionFunction::BbBald)
    }

    /// Rejects combinations that cannot be scored, before any training happens.
    pub fn check(self, task: Task, flavor: &Flavor, bbb_mode: BbbMode) -> Result<()> {
        let incompatible = |why: String| Err(DalError::Incompatible(format!("{}: {why}", self.name())));
        match self {
            AcquisitionFunction::Mnlp if task != Task::Tagging => incompatible("needs a tagging task".into()),
            AcquisitionFunction::LeastConfidence | AcquisitionFunction::MaxEntropy if task != Task::Classification => {
                incompatible("needs a classification task".into())
            }
            AcquisitionFunction::DoBald if !matches!(flavor, Flavor::Dropout { .. }) => {
                incompatible(format!("needs a dropout model, got `{}`", flavor.name()))
            }
            AcquisitionFunction::DoBald if matches!(flavor, Flavor::Dropout { rate } if *rate == 0.0) => {
                log::warn!("do-bald with dropout rate 0: every pass agrees and scores are all zero");
                Ok(())
            }
            AcquisitionFunction::BbBald
                if bbb_mode == BbbMode::SelfModel && !matches!(flavor, Flavor::BayesByBackprop { .. }) =>
            {
                incompatible(format!("self mode needs a bayes-by-backprop model, got `{}`", flavor.name()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionScore {
    pub id: usize,
    pub score: f64,
    pub tiebreak: f64,
    pub cost: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetUnit {
    Sentences,
    Words,
}

impl BudgetUnit {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification => BudgetUnit::Sentences,
            Task::Tagging => BudgetUnit::Words,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub unit: BudgetUnit,
    pub amount: usize,
}

/// Sets each score's cost; `cost_of` is called with the example id.
pub fn assign_costs(scores: &mut [AcquisitionScore], mut cost_of: impl FnMut(usize) -> usize) {
    for s in scores {
        s.cost = cost_of(s.id).max(1);
    }
}

fn plain(id: usize, score: f64) -> AcquisitionScore {
    AcquisitionScore { id, score, tiebreak: 0.0, cost: 1 }
}

fn check_lengths(ids: &[usize], n: usize) -> Result<()> {
    if ids.len() != n {
        return Err(DalError::invalid(format!("{} ids for {n} predictions", ids.len())));
    }
    Ok(())
}

fn check_distribution(row: &[f64]) -> Result<()> {
    let total: f64 = row.iter().sum();
    if row.is_empty() || row.iter().any(|p| !p.is_finite() || *p < 0.0) || (total - 1.0).abs() > 1e-6 {
        return Err(DalError::invalid(format!("not a probability distribution: {row:?}")));
    }
    Ok(())
}

fn single_row(p: &Tensor) -> Result<&[f64]> {
    if p.rows() != 1 {
        return Err(DalError::Shape(format!("expected one distribution per example, got {} rows", p.rows())));
    }
    Ok(p.row_slice(0))
}

/// Uniformly random ranking: scores are a permutation of `0..n`.
pub fn score_random(ids: &[usize], seed: u64) -> Vec<AcquisitionScore> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut rng_from(seed));
    let n = ids.len();
    let mut scores = vec![plain(0, 0.0); n];
    for (rank, &i) in order.iter().enumerate() {
        scores[i] = plain(ids[i], (n - 1 - rank) as f64);
    }
    scores
}

/// Least confidence: `1 - max_k p_k`.
pub fn score_lc(ids: &[usize], distributions: &[Tensor]) -> Result<Vec<AcquisitionScore>> {
    check_lengths(ids, distributions.len())?;
    ids.iter()
        .zip(distributions)
        .map(|(&id, p)| {
            let row = single_row(p)?;
            check_distribution(row)?;
            Ok(plain(id, 1.0 - row.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
        })
        .collect()
}

/// Negated length-normalised log probability of the per-token argmax.
pub fn score_mnlp(ids: &[usize], sequences: &[Tensor]) -> Result<Vec<AcquisitionScore>> {
    check_lengths(ids, sequences.len())?;
    ids.iter()
        .zip(sequences)
        .map(|(&id, p)| {
            if p.rows() == 0 {
                return Err(DalError::invalid(format!("example {id}: empty sequence")));
            }
            let mut total = 0.0;
            for r in 0..p.rows() {
                let row = p.row_slice(r);
                check_distribution(row)?;
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max <= 0.0 {
                    return Err(DalError::invalid(format!("example {id}: zero maximum probability")));
                }
                total += max.ln();
            }
            Ok(plain(id, -total / p.rows() as f64))
        })
        .collect()
}

/// Entropy of the predictive distribution.
pub fn score_max_entropy(ids: &[usize], distributions: &[Tensor]) -> Result<Vec<AcquisitionScore>> {
    check_lengths(ids, distributions.len())?;
    ids.iter()
        .zip(distributions)
        .map(|(&id, p)| {
            let row = single_row(p)?;
            check_distribution(row)?;
            Ok(plain(id, -row.iter().filter(|&&q| q > 0.0).map(|&q| q * q.ln()).sum::<f64>()))
        })
        .collect()
}

/// Vote disagreement over `T` stochastic passes (`ensemble[pass][example]`).
///
/// A vote is the argmax class (classification) or the whole argmax tag
/// sequence (tagging). The score is `1 - count(mode) / T`; vote-count ties
/// go to the smallest class / lexicographically smallest sequence. The
/// tiebreak is the mean over passes of the probability of the modal
/// prediction; for sequences that probability is the per-token geometric
/// mean.
pub fn score_bald(ids: &[usize], ensemble: &[Vec<Tensor>]) -> Result<Vec<AcquisitionScore>> {
    let passes = ensemble.len();
    if passes < 2 {
        return Err(DalError::invalid(format!("bald needs at least two passes, got {passes}")));
    }
    for pass in ensemble {
        check_lengths(ids, pass.len())?;
    }
    let mut out = Vec::with_capacity(ids.len());
    for (j, &id) in ids.iter().enumerate() {
        let rows = ensemble[0][j].rows();
        let mut votes: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for pass in ensemble {
            let p = &pass[j];
            if p.rows() != rows || rows == 0 {
                return Err(DalError::Shape(format!("example {id}: passes disagree on sequence length")));
            }
            let seq: Vec<usize> = (0..rows)
                .map(|r| {
                    check_distribution(p.row_slice(r))?;
                    Ok(argmax(p.row_slice(r)))
                })
                .collect::<Result<_>>()?;
            *votes.entry(seq).or_default() += 1;
        }
        let best = votes.values().copied().max().expect("at least one vote");
        let mode = votes.iter().find(|(_, &c)| c == best).map(|(s, _)| s.clone()).expect("mode exists");
        let confidence: f64 = ensemble
            .iter()
            .map(|pass| {
                let p = &pass[j];
                let log_mean = mode.iter().enumerate().map(|(r, &k)| p.get(r, k).ln()).sum::<f64>() / rows as f64;
                log_mean.exp()
            })
            .sum::<f64>()
            / passes as f64;
        out.push(AcquisitionScore { id, score: 1.0 - best as f64 / passes as f64, tiebreak: confidence, cost: 1 });
    }
    Ok(out)
}

/// Acquisition order: score descending, tiebreak ascending, id ascending.
pub fn rank(a: &AcquisitionScore, b: &AcquisitionScore) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.tiebreak.total_cmp(&b.tiebreak))
        .then_with(|| a.id.cmp(&b.id))
}

/// Takes examples in [`rank`] order until the cumulative cost reaches
/// `budget.amount`, including the example that crosses it.
pub fn select_batch(scores: &[AcquisitionScore], budget: BudgetSpec) -> Result<Vec<usize>> {
    if budget.amount == 0 {
        return Err(DalError::invalid("budget amount must be at least 1"));
    }
    if let Some(bad) = scores.iter().find(|s| !s.score.is_finite() || s.cost == 0) {
        return Err(DalError::invalid(format!("example {}: score must be finite and cost positive", bad.id)));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(rank);
    let mut spent = 0;
    let mut picked = Vec::new();
    for s in sorted {
        if spent >= budget.amount {
            break;
        }
        spent += s.cost;
        picked.push(s.id);
    }
    Ok(picked)
}
