//! A complete model: optional GP input layer, DRF stack, likelihood.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Var};
use crate::drf::{DrfLayerState, SpectraOption};
use crate::error::{Error, Result};
use crate::gp_layer::{sample_latent_var, BatchMoments, InducingState};
use crate::kernels::{Features, Inputs, KernelSpec};
use crate::likelihood::LikelihoodSpec;
use crate::params::{Bound, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// GP input layer feeding random-feature layers.
    #[default]
    GpDrf,
    /// GP layer only; its outputs go straight to the likelihood.
    Gp,
    /// Random-feature layers on the raw inputs.
    Drf,
}

impl ModelKind {
    pub fn has_gp(self) -> bool {
        !matches!(self, ModelKind::Drf)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::GpDrf => "gpdrf",
            ModelKind::Gp => "gp",
            ModelKind::Drf => "drf",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "gpdrf" => Ok(ModelKind::GpDrf),
            "gp" => Ok(ModelKind::Gp),
            "drf" => Ok(ModelKind::Drf),
            other => Err(Error::Config(format!("unknown model '{other}' (expected gpdrf, gp or drf)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Kernel of the GP layer; unused by the `drf` model.
    pub kernel: KernelSpec,
    /// Widths `d_0, …, d_L`. `d_0` is the GP output (or raw input) width.
    pub widths: Vec<usize>,
    /// Random feature counts `M_0, …, M_{L−1}`.
    pub features: Vec<usize>,
    pub likelihood: LikelihoodSpec,
    pub spectra: SpectraOption,
    /// Separate kernel parameters for each GP output dimension.
    pub per_dim_kernel: bool,
    pub jitter: f64,
    /// Initial prior variance of every frequency coordinate.
    pub lambda_init: f64,
    /// Initial feature scale of every layer.
    pub alpha_init: f64,
}

impl ModelConfig {
    pub fn num_layers(&self) -> usize {
        self.features.len()
    }

    /// Check the layer chain, before any data is touched.
    pub fn validate(&self) -> Result<()> {
        self.likelihood.validate()?;
        if self.widths.is_empty() {
            return Err(Error::Config("widths must list at least d_0".into()));
        }
        if let Some(i) = self.widths.iter().position(|w| *w == 0) {
            return Err(Error::Config(format!("widths[{i}] must be positive")));
        }
        if let Some(i) = self.features.iter().position(|m| *m == 0) {
            return Err(Error::Config(format!("features[{i}] must be positive")));
        }
        if self.features.len() + 1 != self.widths.len() {
            return Err(Error::Config(format!(
                "features: {} layers need {} feature counts, got {}",
                self.widths.len() - 1,
                self.widths.len() - 1,
                self.features.len()
            )));
        }
        let out = *self.widths.last().expect("non-empty");
        if out != self.likelihood.output_dim() {
            return Err(Error::Config(format!(
                "widths: last width {out} must equal the likelihood's output dimension {}",
                self.likelihood.output_dim()
            )));
        }
        match self.kind {
            ModelKind::Gp if self.num_layers() != 0 => {
                Err(Error::Config("model gp has no random-feature layers; widths must be [output dim]".into()))
            }
            ModelKind::Drf if self.num_layers() == 0 => {
                Err(Error::Config("model drf needs at least one random-feature layer".into()))
            }
            ModelKind::Drf if !matches!(self.kernel, KernelSpec::Ard(_)) => {
                Err(Error::Config("model drf needs fixed-size vector inputs".into()))
            }
            _ => Ok(()),
        }?;
        if !(self.jitter >= 0.0) {
            return Err(Error::Config(format!("jitter must be non-negative, got {}", self.jitter)));
        }
        if !(self.lambda_init > 0.0) || !(self.alpha_init > 0.0) {
            return Err(Error::Config("lambda_init and alpha_init must be positive".into()));
        }
        Ok(())
    }

    /// Check that `x` can be fed to this model.
    pub fn check_inputs(&self, x: &Inputs) -> Result<()> {
        self.kernel.check_inputs(x)?;
        if self.kind == ModelKind::Drf {
            if let Inputs::Dense(m) = x {
                if m.ncols() != self.widths[0] {
                    return Err(Error::Config(format!(
                        "widths: model drf needs d_0 = input dimension {}, got {}",
                        m.ncols(),
                        self.widths[0]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Standard-normal noise for one Monte-Carlo sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleNoise {
    /// `B × d_0` noise for the GP marginals; absent for the `drf` model.
    pub latent: Option<DMatrix<f64>>,
    /// `e` per layer, `2M_l × d_{l+1}`.
    pub weights: Vec<DMatrix<f64>>,
    /// `τ` per layer, `d_l × M_l`.
    pub spectra: Vec<DMatrix<f64>>,
}

/// What a batch contributes before per-sample noise is applied.
#[derive(Debug, Clone, Copy)]
pub enum LatentBase<'t> {
    Moments(BatchMoments<'t>),
    Inputs(Var<'t>),
}

/// KL terms on the tape. `spectra` is absent when `Ω` comes from the prior.
#[derive(Debug, Clone, Copy)]
pub struct KlTerms<'t> {
    pub inducing: Var<'t>,
    pub weights: Var<'t>,
    pub spectra: Option<Var<'t>>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub gp: Option<InducingState>,
    pub layers: Vec<DrfLayerState>,
    pub log_noise: Option<ParamId>,
}

impl Model {
    /// Fresh parameters. `pseudo_inputs` is required unless the model is `drf`.
    pub fn new(config: ModelConfig, pseudo_inputs: Option<Inputs>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let gp = match (config.kind.has_gp(), pseudo_inputs) {
            (true, Some(z)) => Some(InducingState::new(
                &mut store,
                z,
                config.kernel.clone(),
                config.widths[0],
                config.per_dim_kernel,
                config.jitter,
            )?),
            (true, None) => return Err(Error::Config("GP layer needs pseudo-inputs".into())),
            (false, _) => None,
        };
        let mut layers = Vec::with_capacity(config.num_layers());
        for l in 0..config.num_layers() {
            layers.push(DrfLayerState::new(
                &mut store,
                l,
                config.widths[l],
                config.features[l],
                config.widths[l + 1],
                config.lambda_init,
                config.alpha_init,
                seed,
            )?);
        }
        let log_noise = match config.likelihood {
            LikelihoodSpec::Gaussian { noise_variance } => {
                Some(store.add("likelihood.log_noise", DMatrix::from_element(1, 1, noise_variance.ln())))
            }
            LikelihoodSpec::Softmax { .. } => None,
        };
        Ok(Self { config, store, gp, layers, log_noise })
    }

    /// Rebuild around a store read from a checkpoint.
    pub fn restore(config: ModelConfig, pseudo_inputs: Option<Inputs>, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let gp = match (config.kind.has_gp(), pseudo_inputs) {
            (true, Some(z)) => Some(InducingState::restore(
                &store,
                z,
                config.kernel.clone(),
                config.widths[0],
                config.per_dim_kernel,
                config.jitter,
            )?),
            (true, None) => return Err(Error::Checkpoint("checkpoint has no pseudo-inputs".into())),
            (false, _) => None,
        };
        let layers = (0..config.num_layers())
            .map(|l| {
                DrfLayerState::restore(&store, l, config.widths[l], config.features[l], config.widths[l + 1])
            })
            .collect::<Result<Vec<_>>>()?;
        let log_noise = match config.likelihood {
            LikelihoodSpec::Gaussian { .. } => Some(
                store
                    .id_of("likelihood.log_noise")
                    .ok_or_else(|| Error::Checkpoint("missing parameter block likelihood.log_noise".into()))?,
            ),
            LikelihoodSpec::Softmax { .. } => None,
        };
        Ok(Self { config, store, gp, layers, log_noise })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.config.widths.last().expect("validated")
    }

    /// Parameters trained under the model's spectra option, in store order.
    pub fn active_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = Vec::new();
        if let Some(gp) = &self.gp {
            ids.extend(gp.param_ids());
        }
        for l in &self.layers {
            ids.extend(l.param_ids(self.config.spectra));
        }
        ids.extend(self.log_noise);
        ids.sort_by_key(|id| id.index());
        ids
    }

    /// Current Gaussian noise variance, if any.
    pub fn noise_variance(&self) -> Option<f64> {
        self.log_noise.map(|id| self.store.scalar(id).exp())
    }

    /// Likelihood with the trained noise variance filled in.
    pub fn likelihood(&self) -> LikelihoodSpec {
        match (self.config.likelihood, self.noise_variance()) {
            (LikelihoodSpec::Gaussian { .. }, Some(v)) => LikelihoodSpec::Gaussian { noise_variance: v },
            (spec, _) => spec,
        }
    }

    /// Kernel-ready view of `x`.
    pub fn features(&self, x: &Inputs) -> Result<Features> {
        self.config.check_inputs(x)?;
        match &self.gp {
            Some(gp) => gp.features(x),
            None => match x {
                Inputs::Dense(m) => Ok(Features::Dense(m.clone())),
                Inputs::Sequences(_) => Err(Error::Compatibility("model drf needs vector inputs".into())),
            },
        }
    }

    /// Noise-independent part of a batch: GP marginals or the raw inputs.
    pub fn latent_base<'t>(&self, b: &Bound<'t>, feats: &Features, tape: &'t Tape) -> Result<LatentBase<'t>> {
        match (&self.gp, feats) {
            (Some(gp), _) => Ok(LatentBase::Moments(gp.moments(b, feats)?)),
            (None, Features::Dense(x)) => Ok(LatentBase::Inputs(tape.constant(x.clone()))),
            (None, Features::Profiles(_)) => Err(Error::Compatibility("model drf needs vector inputs".into())),
        }
    }

    /// Network output `G(F)` for one Monte-Carlo sample, `B × d_L`.
    pub fn sample_output<'t>(&self, b: &Bound<'t>, base: &LatentBase<'t>, noise: &SampleNoise) -> Result<Var<'t>> {
        let mut h = match (base, &noise.latent) {
            (LatentBase::Moments(m), Some(eps)) => {
                if eps.shape() != m.mean.shape() {
                    return Err(Error::shape("latent noise", format!("{:?}", m.mean.shape()), format!("{:?}", eps.shape())));
                }
                sample_latent_var(m, eps)
            }
            (LatentBase::Moments(_), None) => return Err(Error::Contract("GP layer needs latent noise".into())),
            (LatentBase::Inputs(x), _) => *x,
        };
        if noise.weights.len() != self.layers.len() || noise.spectra.len() != self.layers.len() {
            return Err(Error::shape("layer noise", self.layers.len(), noise.weights.len().min(noise.spectra.len())));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let w = layer.weights(b, &noise.weights[l]);
            let omega = layer.spectra(b, &noise.spectra[l], self.config.spectra);
            h = layer.forward(b, h, w, omega);
        }
        Ok(h)
    }

    pub fn kl_terms<'t>(&self, b: &Bound<'t>, tape: &'t Tape) -> Result<KlTerms<'t>> {
        let inducing = match &self.gp {
            Some(gp) => gp.kl(b)?,
            None => tape.scalar(0.0),
        };
        let mut weights = tape.scalar(0.0);
        let mut spectra = tape.scalar(0.0);
        for l in &self.layers {
            weights = weights + l.kl_weights_var(b);
            spectra = spectra + l.kl_spectra_var(b);
        }
        Ok(KlTerms {
            inducing,
            weights,
            spectra: self.config.spectra.is_variational().then_some(spectra),
        })
    }

    /// Shapes of the per-layer noise tensors `(e, τ)`.
    pub fn noise_shapes(&self) -> Vec<((usize, usize), (usize, usize))> {
        self.layers
            .iter()
            .map(|l| ((l.feature_dim(), l.output_dim), (l.input_dim, l.num_features)))
            .collect()
    }

    /// Fail on NaN or infinite parameters.
    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in self.store.iter() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!("parameter {name} is not finite")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{ArdParams, SpectrumParams};

    fn config(kind: ModelKind, widths: Vec<usize>, features: Vec<usize>) -> ModelConfig {
        ModelConfig {
            kind,
            kernel: KernelSpec::Ard(ArdParams::new(1.0, vec![1.0, 1.0]).unwrap()),
            widths,
            features,
            likelihood: LikelihoodSpec::Softmax { classes: 3 },
            spectra: SpectraOption::VarFixed,
            per_dim_kernel: false,
            jitter: 1e-6,
            lambda_init: 1.0,
            alpha_init: 1.0,
        }
    }

    #[test]
    fn chain_validation() {
        assert!(config(ModelKind::GpDrf, vec![2, 4, 3], vec![5, 5]).validate().is_ok());
        let err = config(ModelKind::GpDrf, vec![2, 4, 2], vec![5, 5]).validate().unwrap_err();
        assert!(err.to_string().contains("widths"), "{err}");
        assert!(config(ModelKind::GpDrf, vec![2, 3], vec![5, 5]).validate().is_err());
        assert!(config(ModelKind::Gp, vec![3], vec![]).validate().is_ok());
        assert!(config(ModelKind::Gp, vec![2, 3], vec![4]).validate().is_err());
        assert!(config(ModelKind::Drf, vec![3], vec![]).validate().is_err());
        let mut seq = config(ModelKind::Drf, vec![2, 3], vec![4]);
        seq.kernel = KernelSpec::Spectrum(SpectrumParams::new(2, 0, b"AB".to_vec(), 1.0, true).unwrap());
        assert!(seq.validate().is_err());
    }

    #[test]
    fn drf_input_width() {
        let c = config(ModelKind::Drf, vec![2, 3], vec![4]);
        assert!(c.check_inputs(&Inputs::Dense(DMatrix::zeros(1, 2))).is_ok());
        let mut c3 = config(ModelKind::Drf, vec![3, 3], vec![4]);
        c3.kernel = KernelSpec::Ard(ArdParams::new(1.0, vec![1.0; 2]).unwrap());
        assert!(c3.check_inputs(&Inputs::Dense(DMatrix::zeros(1, 2))).is_err());
    }

    #[test]
    fn active_params_follow_option() {
        let z = Inputs::Dense(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let mut c = config(ModelKind::GpDrf, vec![2, 3], vec![4]);
        let var = Model::new(c.clone(), Some(z.clone()), 0).unwrap();
        c.spectra = SpectraOption::PriorFixed;
        let prior = Model::new(c, Some(z), 0).unwrap();
        assert_eq!(var.active_params().len(), prior.active_params().len() + 2);
        assert_eq!(var.store.len(), prior.store.len());
    }

    #[test]
    fn restore_round_trip() {
        let z = Inputs::Dense(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let mut c = config(ModelKind::GpDrf, vec![2, 3, 1], vec![4, 2]);
        c.likelihood = LikelihoodSpec::Gaussian { noise_variance: 0.1 };
        let m = Model::new(c.clone(), Some(z.clone()), 3).unwrap();
        let r = Model::restore(c, Some(z), m.store.clone()).unwrap();
        assert_eq!(r.active_params(), m.active_params());
        assert!((r.noise_variance().unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn gp_model_needs_pseudo_inputs() {
        assert!(matches!(Model::new(config(ModelKind::Gp, vec![3], vec![]), None, 0), Err(Error::Config(_))));
        assert!(Model::new(config(ModelKind::Drf, vec![2, 3], vec![4]), None, 0).is_ok());
    }
}
