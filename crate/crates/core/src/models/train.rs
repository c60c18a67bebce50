use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Tape};
use crate::data::Task;
use crate::error::{DalError, Result};
use crate::metrics::{accuracy, span_f1};
use crate::models::config::TrainConfig;
use crate::models::network::{Encoded, Model, Noise};
use crate::models::predict::argmax;
use crate::seed::{derive_seed, rng_from, tag};

/// Metric and mean cross-entropy of a deterministic pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Accuracy for classification, span F1 for tagging.
    pub metric: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: Option<Evaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Scores `data` with the deterministic predictor.
pub fn evaluate(model: &Model, data: &[Encoded]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(DalError::invalid("cannot evaluate on an empty set"));
    }
    let probs = model.predict_proba(data)?;
    let mut nll = 0.0;
    let mut count = 0usize;
    for (p, ex) in probs.iter().zip(data) {
        for (r, &y) in ex.labels.iter().enumerate() {
            nll -= p.get(r, y).max(f64::MIN_POSITIVE).ln();
            count += 1;
        }
    }
    let loss = nll / count as f64;
    let predicted: Vec<Vec<usize>> =
        probs.iter().map(|p| (0..p.rows()).map(|r| argmax(p.row_slice(r))).collect()).collect();
    let metric = match model.config().task() {
        Task::Classification => {
            let pred: Vec<usize> = predicted.iter().map(|p| p[0]).collect();
            let gold: Vec<usize> = data.iter().map(|e| e.labels[0]).collect();
            accuracy(&pred, &gold)?
        }
        Task::Tagging => {
            let names = model.label_names();
            let to_names = |seq: &[usize]| seq.iter().map(|&i| names[i].as_str()).collect::<Vec<_>>();
            let pred: Vec<Vec<&str>> = predicted.iter().map(|p| to_names(p)).collect();
            let gold: Vec<Vec<&str>> = data.iter().map(|e| to_names(&e.labels)).collect();
            span_f1(&pred, &gold)?.f1
        }
    };
    Ok(Evaluation { metric, loss })
}

fn better(candidate: &Evaluation, best: &Evaluation) -> bool {
    candidate.metric > best.metric || (candidate.metric == best.metric && candidate.loss < best.loss)
}

/// Trains with Adam and early stopping on `validation`, then restores the best
/// epoch's parameters. With an empty validation set the training loss drives
/// early stopping.
pub fn train(model: &mut Model, data: &[Encoded], validation: &[Encoded], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(DalError::invalid("cannot train on an empty set"));
    }
    model.targets(&data.iter().collect::<Vec<_>>())?;
    if validation.is_empty() {
        log::warn!("empty validation set; early stopping on training loss");
    }
    let adam = AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() };
    let batch_size = cfg.batch_size(data.len());
    let num_batches = data.len().div_ceil(batch_size);
    let stochastic = model.config().flavor.is_stochastic();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(Evaluation, usize, Vec<(String, crate::Tensor)>)> = None;
    let mut stale = 0;
    let mut step = 0u64;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng_from(derive_seed(derive_seed(cfg.seed, tag("shuffle")), epoch as u64)));
        let mut total = 0.0;
        for idx in order.chunks(batch_size) {
            let batch: Vec<&Encoded> = idx.iter().map(|&i| &data[i]).collect();
            let mut noise = if stochastic { Noise::both(derive_seed(cfg.seed, step)) } else { Noise::off() };
            step += 1;
            let mut tape = Tape::new();
            let loss = model.loss(&mut tape, model.params(), &batch, &mut noise, num_batches)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(DalError::invalid(format!("training diverged at epoch {epoch}: loss {value}")));
            }
            total += value * batch.len() as f64;
            let params = model.params_mut();
            params.zero_grad();
            tape.backward(loss, params)?;
            params.adam_step(&adam);
        }
        let train_loss = total / data.len() as f64;
        let current = if validation.is_empty() {
            Evaluation { metric: -train_loss, loss: train_loss }
        } else {
            evaluate(model, validation)?
        };
        history.push(EpochRecord { epoch, train_loss, validation: (!validation.is_empty()).then_some(current) });
        let improved = best.as_ref().is_none_or(|(b, _, _)| better(&current, b));
        if improved {
            best = Some((current, epoch, model.params().snapshot()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (_, best_epoch, snapshot) = best.expect("at least one epoch");
    model.params_mut().restore(&snapshot)?;
    Ok(TrainReport { epochs: history.len(), best_epoch, history })
}
