//! Pool-based deep active learning simulator.

pub mod acquisition;
pub mod al_loop;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod plot;
pub mod seed;
pub mod stochastic;
pub mod tensor;

pub use error::{DalError, Result};
pub use tensor::Tensor;
