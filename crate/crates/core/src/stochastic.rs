//! Monte Carlo dropout masks and Bayes-by-Backprop variational layers.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, ParameterStore, Tape, Var};
use crate::error::{DalError, Result};
use crate::seed::Rng;
use crate::tensor::Tensor;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutScope {
    /// Independent mask entry for every activation.
    #[default]
    PerActivation,
    /// One mask row per sequence, reused at every timestep.
    PerSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub rate: f64,
    #[serde(default)]
    pub scope: DropoutScope,
}

impl DropoutSpec {
    pub fn new(rate: f64, scope: DropoutScope) -> Result<Self> {
        let spec = Self { rate, scope };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(DalError::invalid(format!("dropout rate must be in [0, 1), got {}", self.rate)));
        }
        Ok(())
    }
}

/// Samples an inverted-dropout mask: entries are 0 with probability `rate`
/// and `1 / (1 - rate)` otherwise.
///
/// For [`DropoutScope::PerSequence`] a single `[1, cols]` row is returned;
/// use [`tile_rows`] to apply it at every timestep.
pub fn sample_dropout_mask(spec: &DropoutSpec, rows: usize, cols: usize, rng: &mut Rng) -> Result<Tensor> {
    spec.validate()?;
    let rows = match spec.scope {
        DropoutScope::PerActivation => rows,
        DropoutScope::PerSequence => 1,
    };
    let keep = 1.0 / (1.0 - spec.rate);
    let data = if spec.rate == 0.0 {
        vec![1.0; rows * cols]
    } else {
        (0..rows * cols).map(|_| if rng.random::<f64>() < spec.rate { 0.0 } else { keep }).collect()
    };
    Tensor::matrix(rows, cols, data)
}

/// Repeats a `[1, n]` row `times` times.
pub fn tile_rows(row: &Tensor, times: usize) -> Tensor {
    let mut data = Vec::with_capacity(times * row.len());
    for _ in 0..times {
        data.extend_from_slice(row.data());
    }
    Tensor::matrix(times, row.len(), data).expect("consistent tile")
}

/// Prior over weights for Bayes-by-Backprop layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorSpec {
    /// Zero-mean Gaussian with the given standard deviation.
    Gaussian { std: f64 },
    /// `pi * N(0, std1²) + (1 - pi) * N(0, std2²)`.
    ScaleMixture { pi: f64, std1: f64, std2: f64 },
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::Gaussian { std: 1.0 }
    }
}

fn gaussian_log_density(x: f64, std: f64) -> f64 {
    -HALF_LN_2PI - std.ln() - 0.5 * (x / std).powi(2)
}

impl PriorSpec {
    /// Scale mixture with `pi = 0.5`, `std1 = 1`, `std2 = e^-6`.
    pub fn default_mixture() -> Self {
        PriorSpec::ScaleMixture { pi: 0.5, std1: 1.0, std2: (-6.0f64).exp() }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PriorSpec::Gaussian { std } if std > 0.0 => Ok(()),
            PriorSpec::ScaleMixture { pi, std1, std2 } if std1 > 0.0 && std2 > 0.0 && pi > 0.0 && pi < 1.0 => {
                Ok(())
            }
            other => Err(DalError::invalid(format!("invalid prior {other:?}"))),
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            PriorSpec::Gaussian { std } => gaussian_log_density(x, std),
            PriorSpec::ScaleMixture { pi, std1, std2 } => {
                let a = pi.ln() + gaussian_log_density(x, std1);
                let b = (1.0 - pi).ln() + gaussian_log_density(x, std2);
                let m = a.max(b);
                m + ((a - m).exp() + (b - m).exp()).ln()
            }
        }
    }

    /// d/dx of [`PriorSpec::log_density`].
    pub fn log_density_grad(&self, x: f64) -> f64 {
        match *self {
            PriorSpec::Gaussian { std } => -x / (std * std),
            PriorSpec::ScaleMixture { pi, std1, std2 } => {
                let a = pi.ln() + gaussian_log_density(x, std1);
                let b = (1.0 - pi).ln() + gaussian_log_density(x, std2);
                let m = a.max(b);
                let (ea, eb) = ((a - m).exp(), (b - m).exp());
                let (ra, rb) = (ea / (ea + eb), eb / (ea + eb));
                -x * (ra / (std1 * std1) + rb / (std2 * std2))
            }
        }
    }
}

/// Diagonal-Gaussian posterior over a weight matrix and optional bias.
///
/// The means and pre-softplus scales live in a [`ParameterStore`] under
/// `{name}.w.mu`, `{name}.w.rho`, `{name}.b.mu` and `{name}.b.rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalLinear {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub bias: bool,
    pub prior: PriorSpec,
}

/// Initial value of every `rho`: softplus(-3) ≈ 0.0486.
pub const RHO_INIT: f64 = -3.0;
/// Half-width of the uniform initialisation of `mu`.
pub const MU_INIT: f64 = 0.1;

/// One reparameterised draw from a [`VariationalLinear`].
#[derive(Debug, Clone)]
pub struct SampledLinear {
    pub weight: Var,
    pub bias: Option<Var>,
    pub(crate) parts: Vec<SampledPart>,
}

#[derive(Debug, Clone)]
pub(crate) struct SampledPart {
    pub mu: Var,
    pub sigma: Var,
    pub sample: Var,
    pub eps: Tensor,
}

impl SampledLinear {
    /// The standard-normal noise used for the weight (and bias) draw.
    pub fn eps(&self) -> Vec<&Tensor> {
        self.parts.iter().map(|p| &p.eps).collect()
    }
}

impl VariationalLinear {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, bias: bool, prior: PriorSpec) -> Self {
        Self { name: name.into(), rows, cols, bias, prior }
    }

    fn keys(&self) -> Vec<(String, String, Vec<usize>)> {
        let mut k = vec![(format!("{}.w.mu", self.name), format!("{}.w.rho", self.name), vec![self.rows, self.cols])];
        if self.bias {
            k.push((format!("{}.b.mu", self.name), format!("{}.b.rho", self.name), vec![1, self.cols]));
        }
        k
    }

    /// Registers freshly initialised `mu`/`rho` tensors in `store`.
    pub fn init(&self, store: &mut ParameterStore, rng: &mut Rng) -> Result<()> {
        self.prior.validate()?;
        for (mu, rho, shape) in self.keys() {
            let n: usize = shape.iter().product();
            let mu_vals = (0..n).map(|_| rng.random_range(-MU_INIT..MU_INIT)).collect();
            store.insert(mu, Tensor::new(shape.clone(), mu_vals)?)?;
            store.insert(rho, Tensor::filled(&shape, RHO_INIT))?;
        }
        Ok(())
    }

    /// Draws `w = mu + softplus(rho) * eps` on the tape. With `noise = None`
    /// the posterior mean is used (eps = 0).
    pub fn sample(&self, tape: &mut Tape, store: &ParameterStore, noise: Option<&mut Rng>) -> Result<SampledLinear> {
        let mut noise = noise;
        let mut parts = Vec::new();
        for (mu_key, rho_key, shape) in self.keys() {
            let n: usize = shape.iter().product();
            let eps_vals: Vec<f64> = match noise.as_deref_mut() {
                Some(rng) => (0..n).map(|_| StandardNormal.sample(rng)).collect(),
                None => vec![0.0; n],
            };
            let eps = Tensor::new(shape.clone(), eps_vals)?;
            parts.push(self.draw(tape, store, &mu_key, &rho_key, eps)?);
        }
        let weight = parts[0].sample;
        let bias = parts.get(1).map(|p| p.sample);
        Ok(SampledLinear { weight, bias, parts })
    }

    /// Reparameterised draw with caller-supplied noise.
    pub fn sample_with(&self, tape: &mut Tape, store: &ParameterStore, eps: &[Tensor]) -> Result<SampledLinear> {
        let keys = self.keys();
        if eps.len() != keys.len() {
            return Err(DalError::invalid(format!("expected {} noise tensors, got {}", keys.len(), eps.len())));
        }
        let mut parts = Vec::new();
        for ((mu_key, rho_key, shape), e) in keys.into_iter().zip(eps) {
            if e.shape() != shape.as_slice() {
                return Err(DalError::Shape(format!("noise {:?} for parameter of shape {shape:?}", e.shape())));
            }
            parts.push(self.draw(tape, store, &mu_key, &rho_key, e.clone())?);
        }
        let weight = parts[0].sample;
        let bias = parts.get(1).map(|p| p.sample);
        Ok(SampledLinear { weight, bias, parts })
    }

    fn draw(&self, tape: &mut Tape, store: &ParameterStore, mu_key: &str, rho_key: &str, eps: Tensor) -> Result<SampledPart> {
        let mu = tape.param(store, mu_key)?;
        let rho = tape.param(store, rho_key)?;
        let sigma = tape.softplus(rho);
        let e = tape.constant(eps.clone());
        let noise = tape.mul(sigma, e)?;
        let sample = tape.add(mu, noise)?;
        Ok(SampledPart { mu, sigma, sample, eps })
    }

    /// `log q(w | mu, sigma) - log p(w)` summed over every sampled entry,
    /// recorded on the tape so gradients reach `mu` and `rho`.
    pub fn log_q_minus_log_p(&self, tape: &mut Tape, sampled: &SampledLinear) -> Result<Var> {
        let expected = self.keys();
        if sampled.parts.len() != expected.len() {
            return Err(DalError::Shape(format!(
                "sample has {} parts, layer `{}` has {}",
                sampled.parts.len(),
                self.name,
                expected.len()
            )));
        }
        let mut total: Option<Var> = None;
        for (part, (_, _, shape)) in sampled.parts.iter().zip(&expected) {
            if tape.value(part.sample).shape() != shape.as_slice() {
                return Err(DalError::Shape(format!(
                    "sampled weight {:?} vs layer shape {shape:?}",
                    tape.value(part.sample).shape()
                )));
            }
            // log N(w | mu, sigma) = -½ln2π - ln σ - ½((w - mu)/σ)²
            let diff = tape.sub(part.sample, part.mu)?;
            let z = tape.div(diff, part.sigma)?;
            let z2 = tape.square(z);
            let half_z2 = tape.scale(z2, -0.5);
            let log_sigma = tape.ln(part.sigma);
            let log_q = tape.sub(half_z2, log_sigma)?;
            let log_q = tape.add_scalar(log_q, -HALF_LN_2PI);
            let log_p = tape.prior_log_density(part.sample, self.prior);
            let term = tape.sub(log_q, log_p)?;
            let term = tape.sum(term);
            total = Some(match total {
                Some(t) => tape.add(t, term)?,
                None => term,
            });
        }
        total.ok_or_else(|| DalError::invalid("variational layer without parameters"))
    }

    /// Posterior standard deviations (softplus of `rho`) of the weight.
    pub fn weight_sigma(&self, store: &ParameterStore) -> Option<Tensor> {
        store.get(&format!("{}.w.rho", self.name)).map(|r| r.map(softplus))
    }
}

/// Splits a dataset-level complexity term evenly over `num_batches`
/// minibatches.
pub fn kl_weighting(tape: &mut Tape, total_kl: Var, num_batches: usize) -> Result<Var> {
    Ok(tape.scale(total_kl, kl_weight(num_batches)?))
}

/// The per-minibatch multiplier used by [`kl_weighting`].
pub fn kl_weight(num_batches: usize) -> Result<f64> {
    if num_batches == 0 {
        return Err(DalError::invalid("kl weighting needs at least one batch"));
    }
    Ok(1.0 / num_batches as f64)
}

/// Inverse of softplus, for setting a target sigma.
pub fn rho_for_sigma(sigma: f64) -> f64 {
    sigma.exp_m1().ln()
}
