use crate::autodiff::{softmax_rows, Tape};
use crate::error::{DalError, Result};
use crate::models::network::{Encoded, Model, Noise};
use crate::seed::{derive_seed, rng_from};
use crate::tensor::Tensor;

const CHUNK: usize = 64;

/// Per-example class distributions: `[1, C]` for classification and
/// `[tokens, C]` for tagging.
pub type Predictions = Vec<Tensor>;

/// Index of the largest entry; the first one wins on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl Model {
    /// Runs `data` in chunks. When `weight_seed` is set the weight stream is
    /// restarted for every chunk so all chunks share one weight sample; the
    /// mask stream carries on across chunks.
    fn run(&self, data: &[Encoded], mut noise: Noise, weight_seed: Option<u64>) -> Result<Predictions> {
        let mut out = Vec::with_capacity(data.len());
        for chunk in data.chunks(CHUNK) {
            let batch: Vec<&Encoded> = chunk.iter().collect();
            noise.weights = weight_seed.map(rng_from);
            let mut tape = Tape::new();
            let fwd = self.forward(&mut tape, &batch, &mut noise)?;
            let probs = softmax_rows(tape.value(fwd.logits));
            let c = probs.cols();
            let mut row = 0;
            for ex in chunk {
                let n = match self.config.task() {
                    crate::data::Task::Classification => 1,
                    crate::data::Task::Tagging => ex.ids.len(),
                };
                out.push(Tensor::matrix(n, c, probs.data()[row * c..(row + n) * c].to_vec())?);
                row += n;
            }
        }
        Ok(out)
    }

    /// Deterministic prediction: no dropout, variational weights at their means.
    pub fn predict_proba(&self, data: &[Encoded]) -> Result<Predictions> {
        self.run(data, Noise::off(), None)
    }

    /// One stochastic pass. The weight sample is held fixed across the whole
    /// pass; dropout masks are drawn fresh for every activation.
    pub fn predict_stochastic(&self, data: &[Encoded], seed: u64) -> Result<Predictions> {
        if !self.config.flavor.is_stochastic() {
            return Err(DalError::Incompatible(format!(
                "stochastic prediction needs a stochastic model, got `{}`",
                self.config.flavor.name()
            )));
        }
        let noise = Noise { weights: None, masks: Some(rng_from(derive_seed(seed, 2))) };
        self.run(data, noise, Some(derive_seed(seed, 1)))
    }

    /// `passes` stochastic passes; pass `t` is seeded with `derive(seed, t)`.
    /// Returns `[pass][example]`.
    pub fn stochastic_ensemble(&self, data: &[Encoded], passes: usize, seed: u64) -> Result<Vec<Predictions>> {
        if passes < 2 {
            return Err(DalError::invalid(format!("an ensemble needs at least two passes, got {passes}")));
        }
        (0..passes).map(|t| self.predict_stochastic(data, derive_seed(seed, t as u64))).collect()
    }
}
