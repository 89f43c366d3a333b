use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tape::Var;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for a fixed list of parameter blocks.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<DMatrix<f64>>,
    second: Vec<DMatrix<f64>>,
    step: u64,
}

impl AdamState {
    /// Zeroed accumulators shaped like `params`.
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a DMatrix<f64>>) -> Self {
        let (first, second) = params
            .into_iter()
            .map(|p| (DMatrix::zeros(p.nrows(), p.ncols()), DMatrix::zeros(p.nrows(), p.ncols())))
            .unzip();
        Self {
            config,
            first,
            second,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected descent step on `params` in place.
    ///
    /// `names` is only used to label a non-finite gradient. Nothing is
    /// modified if any gradient is NaN or infinite.
    pub fn step(&mut self, params: &mut [DMatrix<f64>], grads: &[DMatrix<f64>], names: &[&str]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} parameter blocks", self.first.len()),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::shape(
                    format!("adam_step block {}", names.get(i).copied().unwrap_or("?")),
                    format!("{:?}", self.first[i].shape()),
                    format!("{:?} / {:?}", p.shape(), g.shape()),
                ));
            }
            if g.iter().any(|v| !v.is_finite()) {
                let name = names.get(i).map(|s| s.to_string()).unwrap_or_else(|| format!("#{i}"));
                return Err(Error::NonFiniteGradient(name));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                p[k] -= learning_rate * mhat / (vhat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// `coefficient · Σ‖p‖²` recorded on the tape.
pub fn l2_penalty<'t>(params: &[Var<'t>], coefficient: f64) -> Result<Var<'t>> {
    if !(coefficient >= 0.0) {
        return Err(Error::Config(format!("L2 coefficient must be non-negative, got {coefficient}")));
    }
    let first = params
        .first()
        .ok_or_else(|| Error::Config("L2 penalty over an empty parameter set".into()))?;
    let tape = first.tape();
    let total = params
        .iter()
        .fold(tape.scalar(0.0), |acc, p| acc + p.square().sum());
    Ok(total.scale(coefficient))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tape;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut params = vec![DMatrix::from_row_slice(1, 3, &[0.5, -1.0, 2.0])];
        let before = params.clone();
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        for _ in 0..5 {
            adam.step(&mut params, &[DMatrix::zeros(1, 3)], &["p"]).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let config = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut params = vec![DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 0.0])];
        let mut adam = AdamState::new(config, &params);
        let g = DMatrix::from_row_slice(1, 3, &[3.0, -0.2, 1e-3]);
        adam.step(&mut params, &[g.clone()], &["p"]).unwrap();
        for k in 0..3 {
            // mhat = g, vhat = g², so the step is lr·g/(|g| + ε).
            let expected = -0.01 * g[k] / (g[k].abs() + 1e-8);
            assert!((params[0][k] - expected).abs() < 1e-15);
            assert!((params[0][k].abs() - 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn default_learning_rate() {
        assert_eq!(AdamConfig::default().learning_rate, 1e-5);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut params = vec![DMatrix::zeros(1, 1), DMatrix::zeros(2, 1)];
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        let grads = vec![DMatrix::zeros(1, 1), DMatrix::from_row_slice(2, 1, &[0.0, f64::NAN])];
        let err = adam.step(&mut params, &grads, &["a", "drf.0.w_mean"]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "drf.0.w_mean"));
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn l2_values() {
        let tape = Tape::new();
        let z = tape.param(DMatrix::zeros(2, 2));
        assert_eq!(l2_penalty(&[z], 0.3).unwrap().scalar(), 0.0);
        let p = tape.param(DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
        let pen = l2_penalty(&[p], 0.5).unwrap();
        assert_eq!(pen.scalar(), 2.5);
        let g = tape.grad(pen, &[p]).unwrap();
        assert_eq!(g[0], DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
        assert!(matches!(l2_penalty(&[p], -1.0), Err(Error::Config(_))));
    }
}
