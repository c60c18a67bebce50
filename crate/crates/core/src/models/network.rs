//! Model parameters and the forward pass of each architecture.

use crate::autodiff::{ParameterStore, Tape, Var};
use crate::data::{EmbeddingMatrix, PAD_INDEX};
use crate::error::{DalError, Result};
use crate::models::config::{Activation, Architecture, Flavor, ModelConfig};
use crate::seed::{rng_from, Rng};
use crate::stochastic::{sample_dropout_mask, tile_rows, DropoutScope, DropoutSpec, VariationalLinear};
use crate::tensor::Tensor;

use rand::Rng as _;

/// Token ids plus gold labels (one for classification, one per token for tagging).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Randomness for one forward pass. Weight noise and activation masks use
/// separate streams so a weight sample can be held fixed across batches.
pub struct Noise {
    pub weights: Option<Rng>,
    pub masks: Option<Rng>,
}

impl Noise {
    pub fn off() -> Self {
        Self { weights: None, masks: None }
    }

    pub fn both(seed: u64) -> Self {
        Self {
            weights: Some(rng_from(crate::seed::derive_seed(seed, 1))),
            masks: Some(rng_from(crate::seed::derive_seed(seed, 2))),
        }
    }

    pub fn is_off(&self) -> bool {
        self.weights.is_none() && self.masks.is_none()
    }
}

/// Output of a forward pass.
pub struct Forward {
    /// `[rows, classes]`: one row per example (classification) or per token (tagging).
    pub logits: Var,
    /// Summed `log q(w) - log p(w)` of every sampled variational layer.
    pub complexity: Option<Var>,
}

/// A dense layer whose weights are either point estimates or variational.
#[derive(Debug, Clone, PartialEq)]
struct Dense {
    name: String,
    rows: usize,
    cols: usize,
    bias: bool,
    variational: Option<VariationalLinear>,
}

impl Dense {
    fn new(name: &str, rows: usize, cols: usize, bias: bool, flavor: &Flavor, stochastic: bool) -> Self {
        let variational = match flavor {
            Flavor::BayesByBackprop { prior } if stochastic => Some(VariationalLinear::new(name, rows, cols, bias, *prior)),
            _ => None,
        };
        Self { name: name.to_owned(), rows, cols, bias, variational }
    }

    fn init(&self, store: &mut ParameterStore, rng: &mut Rng) -> Result<()> {
        if let Some(v) = &self.variational {
            return v.init(store, rng);
        }
        let limit = (6.0 / (self.rows + self.cols) as f64).sqrt();
        let w = (0..self.rows * self.cols).map(|_| rng.random_range(-limit..limit)).collect();
        store.insert(format!("{}.w", self.name), Tensor::matrix(self.rows, self.cols, w)?)?;
        if self.bias {
            store.insert(format!("{}.b", self.name), Tensor::zeros(&[1, self.cols]))?;
        }
        Ok(())
    }

    /// Binds (or samples) the weights for this pass.
    fn bind(&self, tape: &mut Tape, store: &ParameterStore, noise: &mut Noise, complexity: &mut Vec<Var>) -> Result<(Var, Option<Var>)> {
        match &self.variational {
            Some(v) => {
                let sampled = v.sample(tape, store, noise.weights.as_mut())?;
                if noise.weights.is_some() {
                    complexity.push(v.log_q_minus_log_p(tape, &sampled)?);
                }
                Ok((sampled.weight, sampled.bias))
            }
            None => {
                let w = tape.param(store, &format!("{}.w", self.name))?;
                let b = if self.bias { Some(tape.param(store, &format!("{}.b", self.name))?) } else { None };
                Ok((w, b))
            }
        }
    }
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let h = tape.matmul(x, w)?;
    match b {
        Some(b) => tape.add_bias(h, b),
        None => Ok(h),
    }
}

/// A freshly initialised or trained network.
#[derive(Debug, Clone)]
pub struct Model {
    pub(crate) config: ModelConfig,
    pub(crate) label_names: Vec<String>,
    pub(crate) vocab_size: usize,
    pub(crate) store: ParameterStore,
    conv: Option<Dense>,
    rnn_x: Option<Dense>,
    rnn_h: Option<Dense>,
    hidden: Vec<Dense>,
    output: Dense,
}

impl Model {
    /// Builds the architecture described by `config` and initialises its
    /// parameters from `seed`. When `embeddings` is given its rows are used
    /// as the initial embedding table.
    pub fn build(
        config: &ModelConfig,
        vocab_size: usize,
        label_names: Vec<String>,
        embeddings: Option<&EmbeddingMatrix>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if label_names.len() < 2 {
            return Err(DalError::invalid("a model needs at least two output classes"));
        }
        let dim = match embeddings {
            Some(e) if e.matrix.rows() != vocab_size => {
                return Err(DalError::Shape(format!(
                    "embedding table has {} rows for a vocabulary of {vocab_size}",
                    e.matrix.rows()
                )))
            }
            Some(e) => e.dim,
            None => config.embedding_dim,
        };
        let flavor = &config.flavor;
        let act_in = |first_in: usize| -> (Vec<Dense>, usize) {
            let mut layers = Vec::new();
            let mut width = first_in;
            for (i, &h) in config.hidden.iter().enumerate() {
                layers.push(Dense::new(&format!("hidden{i}"), width, h, true, flavor, true));
                width = h;
            }
            (layers, width)
        };
        let (conv, rnn_x, rnn_h, hidden, last) = match config.architecture {
            Architecture::AvgEmbedMlp => {
                let (h, w) = act_in(dim);
                (None, None, None, h, w)
            }
            Architecture::WindowTagger => {
                let (h, w) = act_in(dim * (2 * config.window + 1));
                (None, None, None, h, w)
            }
            Architecture::ConvClassifier => {
                let filters = config.hidden[0];
                let conv = Dense::new("conv", config.conv_width * dim, filters, true, flavor, true);
                let mut layers = Vec::new();
                let mut width = filters;
                for (i, &h) in config.hidden.iter().enumerate().skip(1) {
                    layers.push(Dense::new(&format!("hidden{i}"), width, h, true, flavor, true));
                    width = h;
                }
                (Some(conv), None, None, layers, width)
            }
            Architecture::RecurrentTagger => {
                let state = config.hidden[0];
                let x = Dense::new("rnn.x", dim, state, true, flavor, true);
                let h = Dense::new("rnn.h", state, state, false, flavor, true);
                let mut layers = Vec::new();
                let mut width = state;
                for (i, &hd) in config.hidden.iter().enumerate().skip(1) {
                    layers.push(Dense::new(&format!("hidden{i}"), width, hd, true, flavor, true));
                    width = hd;
                }
                (None, Some(x), Some(h), layers, width)
            }
        };
        let output = Dense::new("out", last, label_names.len(), true, flavor, config.stochastic_output);

        let mut rng = rng_from(seed);
        let mut store = ParameterStore::new();
        let table = match embeddings {
            Some(e) => e.matrix.clone(),
            None => crate::data::random_embeddings(vocab_size, dim, rng.random()).matrix,
        };
        if config.trainable_embeddings {
            store.insert("embed", table)?;
        } else {
            store.insert_frozen("embed", table)?;
        }
        let mut config = config.clone();
        config.embedding_dim = dim;
        let model = Self { config, label_names, vocab_size, store, conv, rnn_x, rnn_h, hidden, output };
        let mut store = model.store.clone();
        for layer in model.layers() {
            layer.init(&mut store, &mut rng)?;
        }
        Ok(Self { store, ..model })
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.conv
            .iter()
            .chain(self.rnn_x.iter())
            .chain(self.rnn_h.iter())
            .chain(self.hidden.iter())
            .chain(std::iter::once(&self.output))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &ParameterStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    fn dropout_rate(&self) -> f64 {
        match self.config.flavor {
            Flavor::Dropout { rate } => rate,
            _ => 0.0,
        }
    }

    fn activate(&self, tape: &mut Tape, x: Var) -> Var {
        match self.config.activation {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
        }
    }

    fn dropout(&self, tape: &mut Tape, x: Var, noise: &mut Noise) -> Result<Var> {
        let rate = self.dropout_rate();
        let Some(rng) = noise.masks.as_mut() else { return Ok(x) };
        if rate == 0.0 {
            return Ok(x);
        }
        let v = tape.value(x);
        let (rows, cols) = (v.rows(), v.cols());
        let mask = sample_dropout_mask(&DropoutSpec { rate, scope: DropoutScope::PerActivation }, rows, cols, rng)?;
        let m = tape.constant(mask);
        tape.mul(x, m)
    }

    /// One mask row per sequence, tiled over `rows` timesteps.
    fn sequence_mask(&self, cols: usize, rows: usize, noise: &mut Noise) -> Result<Option<Tensor>> {
        let rate = self.dropout_rate();
        match noise.masks.as_mut() {
            Some(rng) if rate > 0.0 => {
                let row = sample_dropout_mask(&DropoutSpec { rate, scope: DropoutScope::PerSequence }, rows, cols, rng)?;
                Ok(Some(tile_rows(&row, rows)))
            }
            _ => Ok(None),
        }
    }

    fn check_ids(&self, batch: &[&Encoded]) -> Result<()> {
        for ex in batch {
            if ex.ids.is_empty() {
                return Err(DalError::invalid("empty token sequence"));
            }
            if let Some(&bad) = ex.ids.iter().find(|&&i| i >= self.vocab_size) {
                return Err(DalError::invalid(format!("token id {bad} outside vocabulary of {}", self.vocab_size)));
            }
        }
        Ok(())
    }

    /// Runs the network on a batch, recording onto `tape`.
    pub fn forward(&self, tape: &mut Tape, batch: &[&Encoded], noise: &mut Noise) -> Result<Forward> {
        self.forward_with(tape, &self.store, batch, noise)
    }

    /// Forward pass with an explicit parameter store (used by gradient checks).
    pub fn forward_with(&self, tape: &mut Tape, store: &ParameterStore, batch: &[&Encoded], noise: &mut Noise) -> Result<Forward> {
        if batch.is_empty() {
            return Err(DalError::invalid("empty batch"));
        }
        self.check_ids(batch)?;
        let mut complexity = Vec::new();
        let embed = tape.param(store, "embed")?;
        let mut h = match self.config.architecture {
            Architecture::AvgEmbedMlp => {
                let ids: Vec<usize> = batch.iter().flat_map(|e| e.ids.iter().copied()).collect();
                let lengths: Vec<usize> = batch.iter().map(|e| e.ids.len()).collect();
                let x = tape.gather(embed, &ids)?;
                tape.segment_mean(x, &lengths)?
            }
            Architecture::WindowTagger => {
                let k = self.config.window as isize;
                let mut parts = Vec::new();
                for offset in -k..=k {
                    let mut idx = Vec::new();
                    for ex in batch {
                        let n = ex.ids.len() as isize;
                        for i in 0..n {
                            let j = i + offset;
                            idx.push(if (0..n).contains(&j) { ex.ids[j as usize] } else { PAD_INDEX });
                        }
                    }
                    parts.push(tape.gather(embed, &idx)?);
                }
                if parts.len() == 1 {
                    parts[0]
                } else {
                    tape.concat_cols(&parts)?
                }
            }
            Architecture::ConvClassifier => {
                let conv = self.conv.as_ref().expect("conv layer");
                let (k, b) = conv.bind(tape, store, noise, &mut complexity)?;
                let width = self.config.conv_width;
                let mut pooled = Vec::with_capacity(batch.len());
                for ex in batch {
                    let mut ids = ex.ids.clone();
                    if ids.len() < width {
                        ids.resize(width, PAD_INDEX);
                    }
                    let x = tape.gather(embed, &ids)?;
                    let x = self.dropout(tape, x, noise)?;
                    let c = tape.conv1d(x, k, width)?;
                    let c = match b {
                        Some(b) => tape.add_bias(c, b)?,
                        None => c,
                    };
                    let c = self.activate(tape, c);
                    pooled.push(tape.max_over_time(c)?);
                }
                tape.concat_rows(&pooled)?
            }
            Architecture::RecurrentTagger => {
                let (wx, bx) = self.rnn_x.as_ref().expect("rnn").bind(tape, store, noise, &mut complexity)?;
                let (wh, _) = self.rnn_h.as_ref().expect("rnn").bind(tape, store, noise, &mut complexity)?;
                let state = self.config.hidden[0];
                let dim = self.config.embedding_dim;
                let mut all = Vec::with_capacity(batch.len());
                for ex in batch {
                    let len = ex.ids.len();
                    let x = tape.gather(embed, &ex.ids)?;
                    let x = match self.sequence_mask(dim, len, noise)? {
                        Some(m) => {
                            let m = tape.constant(m);
                            tape.mul(x, m)?
                        }
                        None => x,
                    };
                    let hmask = self.sequence_mask(state, 1, noise)?;
                    let xw = tape.matmul(x, wx)?;
                    let mut prev: Option<Var> = None;
                    let mut states = Vec::with_capacity(len);
                    for t in 0..len {
                        let mut pre = tape.select_row(xw, t)?;
                        if let Some(p) = prev {
                            let p = match &hmask {
                                Some(m) => {
                                    let m = tape.constant(m.clone());
                                    tape.mul(p, m)?
                                }
                                None => p,
                            };
                            let r = tape.matmul(p, wh)?;
                            pre = tape.add(pre, r)?;
                        }
                        let pre = match bx {
                            Some(b) => tape.add_bias(pre, b)?,
                            None => pre,
                        };
                        let ht = self.activate(tape, pre);
                        states.push(ht);
                        prev = Some(ht);
                    }
                    all.push(tape.concat_rows(&states)?);
                }
                if all.len() == 1 {
                    all[0]
                } else {
                    tape.concat_rows(&all)?
                }
            }
        };
        for layer in &self.hidden {
            let x = self.dropout(tape, h, noise)?;
            let (w, b) = layer.bind(tape, store, noise, &mut complexity)?;
            let z = affine(tape, x, w, b)?;
            h = self.activate(tape, z);
        }
        if self.config.stochastic_output {
            h = self.dropout(tape, h, noise)?;
        }
        let (w, b) = self.output.bind(tape, store, noise, &mut complexity)?;
        let logits = affine(tape, h, w, b)?;
        let complexity = match complexity.split_first() {
            None => None,
            Some((first, rest)) => {
                let mut acc = *first;
                for &c in rest {
                    acc = tape.add(acc, c)?;
                }
                Some(acc)
            }
        };
        Ok(Forward { logits, complexity })
    }

    /// Flattened training targets for a batch, aligned with the logits rows.
    pub fn targets(&self, batch: &[&Encoded]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for ex in batch {
            match self.config.task() {
                crate::data::Task::Classification => {
                    if ex.labels.len() != 1 {
                        return Err(DalError::invalid("classification example needs exactly one label"));
                    }
                }
                crate::data::Task::Tagging => {
                    if ex.labels.len() != ex.ids.len() {
                        return Err(DalError::invalid("tagged example needs one label per token"));
                    }
                }
            }
            out.extend_from_slice(&ex.labels);
        }
        Ok(out)
    }

    /// Mean cross-entropy plus, for variational models, the complexity term
    /// weighted by `1 / num_batches` and spread over the batch rows.
    pub fn loss(&self, tape: &mut Tape, store: &ParameterStore, batch: &[&Encoded], noise: &mut Noise, num_batches: usize) -> Result<Var> {
        let fwd = self.forward_with(tape, store, batch, noise)?;
        let targets = self.targets(batch)?;
        let nll = tape.cross_entropy(fwd.logits, &targets)?;
        match fwd.complexity {
            Some(c) => {
                let weighted = crate::stochastic::kl_weighting(tape, c, num_batches)?;
                let per_row = tape.scale(weighted, 1.0 / targets.len() as f64);
                tape.add(nll, per_row)
            }
            None => Ok(nll),
        }
    }
}
