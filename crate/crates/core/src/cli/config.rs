//! Run configuration: a flat, versioned TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskKind};
use crate::drf::SpectraOption;
use crate::error::{Error, Result};
use crate::inference::{InducingStrategy, TrainConfig};
use crate::kernels::{ArdParams, KernelSpec, SpectrumParams};
use crate::likelihood::LikelihoodSpec;
use crate::model::{ModelConfig, ModelKind};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// Comma-separated with a header row.
    #[default]
    Tabular,
    /// `label<TAB>sequence` lines.
    Sequences,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    #[default]
    Ard,
    Spectrum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub task: TaskKind,
    pub model: ModelKind,

    pub format: DataFormat,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub label_column: String,
    pub standardize: bool,
    pub out_dir: PathBuf,

    pub kernel: KernelFamily,
    pub kernel_alpha: f64,
    /// Initial ARD lengthscale parameter, shared by every input dimension.
    pub kernel_gamma: f64,
    pub spectrum_k: usize,
    pub spectrum_m: usize,
    pub spectrum_normalize: bool,
    pub spectrum_temperature: f64,
    /// Sequence symbols; inferred from the training data when absent.
    pub alphabet: Option<String>,
    pub per_dim_kernel: bool,
    pub jitter: f64,

    /// Full chain `d_0, …, d_L`; built from `latent_dim`, `hidden` and the
    /// task's output width when absent.
    pub widths: Option<Vec<usize>>,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Per-layer feature counts; `num_features` for every layer when absent.
    pub features: Option<Vec<usize>>,
    pub num_features: usize,
    pub spectra: SpectraOption,
    pub lambda_init: f64,
    pub alpha_init: f64,
    pub noise_variance: f64,

    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub samples: usize,
    pub draws: usize,
    pub seed: u64,
    pub l2: f64,
    pub inducing: usize,
    pub inducing_strategy: InducingStrategy,
    pub fix_latent_noise: bool,
    pub gp_warmup_epochs: usize,
    pub histogram_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            version: CONFIG_VERSION,
            task: TaskKind::Regression,
            model: ModelKind::GpDrf,
            format: DataFormat::Tabular,
            train_data: None,
            test_data: None,
            label_column: "label".into(),
            standardize: true,
            out_dir: PathBuf::from("out"),
            kernel: KernelFamily::Ard,
            kernel_alpha: 1.0,
            kernel_gamma: 1.0,
            spectrum_k: 5,
            spectrum_m: 1,
            spectrum_normalize: true,
            spectrum_temperature: 1.0,
            alphabet: None,
            per_dim_kernel: false,
            jitter: 1e-6,
            widths: None,
            latent_dim: 2,
            hidden: Vec::new(),
            features: None,
            num_features: 50,
            spectra: SpectraOption::VarFixed,
            lambda_init: 1.0,
            alpha_init: 1.0,
            noise_variance: 0.1,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            samples: t.samples,
            draws: t.draws,
            seed: t.seed,
            l2: t.l2,
            inducing: t.inducing,
            inducing_strategy: t.inducing_strategy,
            fix_latent_noise: t.fix_latent_noise,
            gp_warmup_epochs: t.gp_warmup_epochs,
            histogram_bins: 20,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Version { found: self.version, supported: CONFIG_VERSION });
        }
        if self.format == DataFormat::Sequences && self.task != TaskKind::Classification {
            return Err(Error::Config("task: sequence data is only supported for classification".into()));
        }
        if self.format == DataFormat::Sequences && self.kernel != KernelFamily::Spectrum {
            return Err(Error::Config("kernel: sequence data needs the spectrum kernel".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be positive".into()));
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            samples: self.samples,
            draws: self.draws,
            seed: self.seed,
            l2: self.l2,
            inducing: self.inducing,
            inducing_strategy: self.inducing_strategy,
            fix_latent_noise: self.fix_latent_noise,
            gp_warmup_epochs: self.gp_warmup_epochs,
        }
    }

    /// Model configuration for a training set, with the `gp`/`drf` presets applied.
    pub fn model_config(&self, data: &Dataset) -> Result<ModelConfig> {
        if data.task() != self.task {
            return Err(Error::Compatibility(format!(
                "config task is {:?} but the data holds {:?} targets",
                self.task,
                data.task()
            )));
        }
        let likelihood = match self.task {
            TaskKind::Regression => LikelihoodSpec::Gaussian { noise_variance: self.noise_variance },
            TaskKind::Classification => LikelihoodSpec::Softmax {
                classes: data.num_classes().expect("classification data"),
            },
        };
        let kernel = match self.kernel {
            KernelFamily::Ard => {
                let dim = data
                    .input_dim()
                    .ok_or_else(|| Error::Config("kernel: the ARD kernel needs tabular data".into()))?;
                KernelSpec::Ard(ArdParams::isotropic(self.kernel_alpha, self.kernel_gamma, dim)?)
            }
            KernelFamily::Spectrum => {
                let alphabet = match (&self.alphabet, &data.alphabet) {
                    (Some(a), _) => a.as_bytes().to_vec(),
                    (None, Some(a)) => a.clone(),
                    (None, None) => return Err(Error::Config("kernel: the spectrum kernel needs sequence data".into())),
                };
                let mut p = SpectrumParams::new(
                    self.spectrum_k,
                    self.spectrum_m,
                    alphabet,
                    self.kernel_alpha,
                    self.spectrum_normalize,
                )?;
                if !(self.spectrum_temperature > 0.0) {
                    return Err(Error::Config("spectrum_temperature must be positive".into()));
                }
                p.log_temperature = self.spectrum_temperature.ln();
                KernelSpec::Spectrum(p)
            }
        };
        let out = likelihood.output_dim();
        let mut widths = self.widths.clone().unwrap_or_else(|| {
            let mut w = vec![self.latent_dim];
            w.extend(&self.hidden);
            w.push(out);
            w
        });
        match self.model {
            ModelKind::Gp => widths = vec![out],
            ModelKind::Drf => match data.input_dim() {
                Some(d) => widths[0] = d,
                None => return Err(Error::Config("model drf needs tabular data".into())),
            },
            ModelKind::GpDrf => {}
        }
        let layers = widths.len().saturating_sub(1);
        let features = match (self.model, &self.features) {
            (ModelKind::Gp, _) => Vec::new(),
            (_, Some(f)) => f.clone(),
            (_, None) => vec![self.num_features; layers],
        };
        let config = ModelConfig {
            kind: self.model,
            kernel,
            widths,
            features,
            likelihood,
            spectra: self.spectra,
            per_dim_kernel: self.per_dim_kernel,
            jitter: self.jitter,
            lambda_init: self.lambda_init,
            alpha_init: self.alpha_init,
        };
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Targets;
    use crate::kernels::Inputs;
    use nalgebra::DMatrix;

    fn classification(k: usize) -> Dataset {
        let labels: Vec<usize> = (0..6).map(|i| i % k).collect();
        Dataset::new(
            Inputs::Dense(DMatrix::from_fn(6, 3, |i, j| (i + j) as f64)),
            Targets::Class { labels, classes: (0..k).map(|c| c.to_string()).collect() },
        )
        .unwrap()
    }

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        assert_eq!(RunConfig::from_toml("version = 1").unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_versions() {
        let e = RunConfig::from_toml("version = 1\nepochz = 3").unwrap_err();
        assert!(e.to_string().contains("epochz"), "{e}");
        assert!(matches!(RunConfig::from_toml("version = 2"), Err(Error::Version { found: 2, .. })));
    }

    #[test]
    fn presets() {
        let data = classification(3);
        let mut c = RunConfig { task: TaskKind::Classification, hidden: vec![4], ..RunConfig::default() };
        let m = c.model_config(&data).unwrap();
        assert_eq!(m.widths, vec![2, 4, 3]);
        assert_eq!(m.features, vec![50, 50]);
        c.model = ModelKind::Gp;
        let m = c.model_config(&data).unwrap();
        assert_eq!((m.widths, m.features), (vec![3], vec![]));
        c.model = ModelKind::Drf;
        assert_eq!(c.model_config(&data).unwrap().widths, vec![3, 4, 3]);
    }

    #[test]
    fn chain_mismatch_names_widths() {
        let data = classification(3);
        let c = RunConfig {
            task: TaskKind::Classification,
            widths: Some(vec![2, 2]),
            ..RunConfig::default()
        };
        let e = c.model_config(&data).unwrap_err();
        assert!(e.to_string().contains("widths"), "{e}");
    }
}
