use nalgebra::DMatrix;

use crate::drf::SpectraOption;
use crate::model::{Model, SampleNoise};
use crate::rng::{normal_matrix, tag};

/// Stands in for the epoch and step of noise that never changes.
const FIXED: u64 = u64::MAX;

type LayerNoise = (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>);

/// Standard-normal tensors for every Monte-Carlo sample of a step.
///
/// Tensors are keyed by `(seed, kind, epoch, step, sample, layer)`. Under
/// `var-fixed` the layer noise `e, τ` ignores epoch and step, so it is the
/// same for the whole run; everything else is redrawn every step.
#[derive(Debug, Clone)]
pub struct NoiseBank {
    pub seed: u64,
    pub option: SpectraOption,
    pub samples: usize,
    /// Key the GP noise by datum instead of by step (only under `var-fixed`).
    pub fix_latent: bool,
    latent_dim: Option<usize>,
    shapes: Vec<((usize, usize), (usize, usize))>,
    fixed: Option<Vec<LayerNoise>>,
}

impl NoiseBank {
    pub fn new(model: &Model, samples: usize, seed: u64, fix_latent: bool) -> Self {
        let option = model.config.spectra;
        let mut bank = Self {
            seed,
            option,
            samples,
            fix_latent: fix_latent && option == SpectraOption::VarFixed,
            latent_dim: model.gp.as_ref().map(|_| model.latent_dim()),
            shapes: model.noise_shapes(),
            fixed: None,
        };
        if option == SpectraOption::VarFixed {
            bank.fixed = Some((0..samples).map(|s| bank.layer_noise(FIXED, FIXED, s)).collect());
        }
        bank
    }

    fn layer_noise(&self, epoch: u64, step: u64, s: usize) -> LayerNoise {
        self.shapes
            .iter()
            .enumerate()
            .map(|(l, &((er, ec), (tr, tc)))| {
                let key = |kind| [self.seed, kind, epoch, step, s as u64, l as u64];
                (normal_matrix(er, ec, &key(tag::WEIGHTS)), normal_matrix(tr, tc, &key(tag::SPECTRA)))
            })
            .unzip()
    }

    fn latent(&self, epoch: u64, step: u64, s: usize, batch: &[usize]) -> Option<DMatrix<f64>> {
        let d = self.latent_dim?;
        Some(if self.fix_latent {
            let mut m = DMatrix::zeros(batch.len(), d);
            for (r, &n) in batch.iter().enumerate() {
                let row = normal_matrix(1, d, &[self.seed, tag::LATENT, FIXED, n as u64, s as u64]);
                m.row_mut(r).copy_from(&row);
            }
            m
        } else {
            normal_matrix(batch.len(), d, &[self.seed, tag::LATENT, epoch, step, s as u64])
        })
    }

    /// Noise for step `step` of epoch `epoch` on the rows `batch`.
    pub fn draw(&self, epoch: usize, step: usize, batch: &[usize]) -> Vec<SampleNoise> {
        let (epoch, step) = (epoch as u64, step as u64);
        (0..self.samples)
            .map(|s| {
                let (weights, spectra) = match &self.fixed {
                    Some(f) => f[s].clone(),
                    None => self.layer_noise(epoch, step, s),
                };
                SampleNoise {
                    latent: self.latent(epoch, step, s, batch),
                    weights,
                    spectra,
                }
            })
            .collect()
    }
}
