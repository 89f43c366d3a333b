//! Stochastic variational inference: noise handling, the ELBO estimate,
//! the training loop and inducing-point selection.

mod elbo;
mod inducing;
mod noise;
mod train;

use serde::{Deserialize, Serialize};

use crate::diffcore::DEFAULT_L2;
use crate::error::{Error, Result};

pub use elbo::{
    analytic_elbo, elbo_estimate, elbo_gradient, elbo_on_tape, log_marginal_likelihood, ElboTerms, ElboVars,
};
pub use inducing::{select_inducing, InducingStrategy};
pub use noise::NoiseBank;
pub use train::{train, train_with_progress, Trace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Monte-Carlo samples `S` per ELBO term.
    pub samples: usize,
    /// Predictive draws `T` used when evaluating.
    pub draws: usize,
    pub seed: u64,
    pub l2: f64,
    /// Number of pseudo-inputs `M`.
    pub inducing: usize,
    pub inducing_strategy: InducingStrategy,
    /// Freeze the GP-layer noise per datum as well under `var-fixed`.
    pub fix_latent_noise: bool,
    /// Epochs spent fitting the GP layer alone, as a plain GP against the
    /// likelihood, before the joint fit of a `gpdrf` model. Ignored by other
    /// models; needs the GP width to equal the likelihood's dimension.
    pub gp_warmup_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            learning_rate: 1e-5,
            batch_size: 1,
            samples: 100,
            draws: 100,
            seed: 0,
            l2: DEFAULT_L2,
            inducing: 200,
            inducing_strategy: InducingStrategy::KernelMedoids,
            fix_latent_noise: false,
            gp_warmup_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("samples", self.samples),
            ("inducing", self.inducing),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.draws < 2 {
            return Err(Error::Config(format!("draws must be at least 2, got {}", self.draws)));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed must be below 2^63, got {}", self.seed)));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::Config(format!("l2 must be non-negative, got {}", self.l2)));
        }
        Ok(())
    }
}
