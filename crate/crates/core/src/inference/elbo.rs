use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::{gram, Features, Inputs, KernelSpec};
use crate::likelihood::{log_likelihood_sum, target_matrix, LikelihoodSpec};
use crate::linalg;
use crate::model::{KlTerms, Model, SampleNoise};
use crate::params::Bound;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Value of each ELBO term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    /// Rescaled expected log-likelihood.
    pub data: f64,
    pub kl_inducing: f64,
    pub kl_weights: f64,
    /// Absent when spectra come from the prior.
    pub kl_spectra: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ElboVars<'t> {
    pub data: Var<'t>,
    pub kl: KlTerms<'t>,
    pub total: Var<'t>,
}

impl ElboVars<'_> {
    pub fn values(&self) -> ElboTerms {
        ElboTerms {
            data: self.data.scalar(),
            kl_inducing: self.kl.inducing.scalar(),
            kl_weights: self.kl.weights.scalar(),
            kl_spectra: self.kl.spectra.map(|v| v.scalar()),
            total: self.total.scalar(),
        }
    }
}

/// ELBO estimate on a batch, recorded on `tape`.
///
/// `feats` and `targets` hold the batch rows only; `n_total` is the dataset
/// size used to rescale the batch sum.
pub fn elbo_on_tape<'t>(
    model: &Model,
    b: &Bound<'t>,
    tape: &'t Tape,
    feats: &Features,
    targets: &DMatrix<f64>,
    n_total: usize,
    noise: &[SampleNoise],
) -> Result<ElboVars<'t>> {
    let batch = feats.len();
    if batch == 0 {
        return Err(Error::Input("ELBO batch is empty".into()));
    }
    if noise.is_empty() {
        return Err(Error::Config("ELBO needs at least one Monte-Carlo sample".into()));
    }
    if targets.nrows() != batch {
        return Err(Error::shape("ELBO targets", batch, targets.nrows()));
    }
    let base = model.latent_base(b, feats, tape)?;
    let y = tape.constant(targets.clone());
    let log_noise = model.log_noise.map(|id| b.get(id));
    let spec = model.config.likelihood;
    let mut sum = tape.scalar(0.0);
    for s in noise {
        let g = model.sample_output(b, &base, s)?;
        sum = sum + log_likelihood_sum(&spec, g, y, log_noise);
    }
    let data = sum.scale(n_total as f64 / (batch as f64 * noise.len() as f64));
    let kl = model.kl_terms(b, tape)?;
    let mut total = data - kl.inducing - kl.weights;
    if let Some(ks) = kl.spectra {
        total = total - ks;
    }
    Ok(ElboVars { data, kl, total })
}

fn batch_parts(model: &Model, data: &Dataset, batch: &[usize]) -> Result<(Features, DMatrix<f64>)> {
    if let Some(&i) = batch.iter().find(|&&i| i >= data.len()) {
        return Err(Error::Input(format!("batch index {i} out of range for {} rows", data.len())));
    }
    let feats = model.features(&data.inputs.select(batch))?;
    let targets = target_matrix(&data.targets.select(batch), &model.config.likelihood)?;
    Ok((feats, targets))
}

/// ELBO estimate of the rows `batch` of `data` at the model's parameters.
pub fn elbo_estimate(model: &Model, data: &Dataset, batch: &[usize], noise: &[SampleNoise]) -> Result<ElboTerms> {
    let (feats, targets) = batch_parts(model, data, batch)?;
    let tape = Tape::new();
    let b = model.store.bind_constant(&tape);
    Ok(elbo_on_tape(model, &b, &tape, &feats, &targets, data.len(), noise)?.values())
}

/// ELBO estimate and its gradient with respect to every store block.
pub fn elbo_gradient(
    model: &Model,
    data: &Dataset,
    batch: &[usize],
    noise: &[SampleNoise],
) -> Result<(ElboTerms, Vec<DMatrix<f64>>)> {
    let (feats, targets) = batch_parts(model, data, batch)?;
    let tape = Tape::new();
    let b = model.store.bind(&tape);
    let vars = elbo_on_tape(model, &b, &tape, &feats, &targets, data.len(), noise)?;
    let grads = tape.grad(vars.total, b.vars())?;
    Ok((vars.values(), grads))
}

/// Exact ELBO of a GP-only model with one latent output and Gaussian
/// likelihood, where the expectation has a closed form.
pub fn analytic_elbo(model: &Model, data: &Dataset) -> Result<f64> {
    let (gp, sigma2) = match (&model.gp, model.likelihood()) {
        (Some(gp), LikelihoodSpec::Gaussian { noise_variance }) if model.layers.is_empty() => (gp, noise_variance),
        _ => {
            return Err(Error::Config(
                "closed-form ELBO needs a GP-only model with a Gaussian likelihood".into(),
            ))
        }
    };
    let y = target_matrix(&data.targets, &model.config.likelihood)?;
    let moments = gp.marginal_moments(&model.store, &data.inputs)?;
    let expected: f64 = moments
        .iter()
        .enumerate()
        .map(|(n, m)| {
            let r = y[(n, 0)] - m.mean[0];
            -0.5 * (LN_2PI + sigma2.ln()) - (r * r + m.variance[0]) / (2.0 * sigma2)
        })
        .sum();
    Ok(expected - gp.kl_inducing(&model.store)?)
}

/// `log N(y; 0, K + σ²I)`: the evidence of exact GP regression.
pub fn log_marginal_likelihood(x: &Inputs, y: &[f64], kernel: &KernelSpec, noise_variance: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("log_marginal_likelihood", x.len(), y.len()));
    }
    let mut k = gram(x, x, kernel, 0.0)?.entries;
    for i in 0..k.nrows() {
        k[(i, i)] += noise_variance;
    }
    let l = linalg::cholesky(&k)?;
    let yv = DMatrix::from_column_slice(y.len(), 1, y);
    let alpha = linalg::cholesky_solve(&l, &yv)?;
    Ok(-0.5 * (yv.dot(&alpha) + linalg::cholesky_logdet(&l) + y.len() as f64 * LN_2PI))
}
