//! Text classifiers and sequence taggers with stochastic forward passes.

mod checkpoint;
mod config;
mod network;
mod predict;
mod train;

pub use checkpoint::{load_checkpoint, parse_checkpoint, save_checkpoint, format_checkpoint};
pub use config::{effective_batch_size, Activation, Architecture, Flavor, ModelConfig, TrainConfig};
pub use network::{Encoded, Forward, Model, Noise};
pub use predict::{argmax, Predictions};
pub use train::{evaluate, train, EpochRecord, Evaluation, TrainReport};

use crate::data::{Example, Vocabulary};

/// Maps examples to vocabulary ids.
pub fn encode_examples<'a>(examples: impl IntoIterator<Item = &'a Example>, vocab: &Vocabulary) -> Vec<Encoded> {
    examples
        .into_iter()
        .map(|e| Encoded { ids: vocab.encode(&e.tokens), labels: e.labels.clone() })
        .collect()
}
