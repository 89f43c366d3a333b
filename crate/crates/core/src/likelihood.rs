//! Terminal likelihoods: Gaussian for regression, softmax-categorical for
//! classification. Softmax logits are the network outputs themselves.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Target, Targets};
use crate::diffcore::Var;
use crate::error::{Error, Result};
use crate::rng::{open_uniform, standard_normal};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LikelihoodSpec {
    Gaussian { noise_variance: f64 },
    Softmax { classes: usize },
}

impl LikelihoodSpec {
    /// Width of the network output this likelihood consumes.
    pub fn output_dim(&self) -> usize {
        match self {
            LikelihoodSpec::Gaussian { .. } => 1,
            LikelihoodSpec::Softmax { classes } => *classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LikelihoodSpec::Gaussian { noise_variance } if !(noise_variance > 0.0) => Err(Error::Config(format!(
                "Gaussian noise variance must be positive, got {noise_variance}"
            ))),
            LikelihoodSpec::Softmax { classes } if classes < 2 => {
                Err(Error::Config(format!("softmax needs at least 2 classes, got {classes}")))
            }
            _ => Ok(()),
        }
    }
}

fn logsumexp(g: &[f64]) -> f64 {
    let m = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + g.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(g: &[f64]) -> Vec<f64> {
    let lse = logsumexp(g);
    g.iter().map(|v| (v - lse).exp()).collect()
}

pub fn log_likelihood(y: Target, g: &[f64], spec: &LikelihoodSpec) -> Result<f64> {
    spec.validate()?;
    if g.len() != spec.output_dim() {
        return Err(Error::shape("log_likelihood", spec.output_dim(), g.len()));
    }
    match (spec, y) {
        (LikelihoodSpec::Gaussian { noise_variance }, Target::Real(y)) => {
            Ok(-0.5 * (LN_2PI + noise_variance.ln()) - (y - g[0]).powi(2) / (2.0 * noise_variance))
        }
        (LikelihoodSpec::Softmax { classes }, Target::Class(c)) => {
            if c >= *classes {
                return Err(Error::Input(format!("class index {c} out of range for {classes} classes")));
            }
            Ok(g[c] - logsumexp(g))
        }
        _ => Err(Error::Compatibility("target kind does not match the likelihood".into())),
    }
}

pub fn sample_target<R: Rng + ?Sized>(g: &[f64], spec: &LikelihoodSpec, rng: &mut R) -> Target {
    match spec {
        LikelihoodSpec::Gaussian { noise_variance } => {
            Target::Real(g[0] + noise_variance.sqrt() * standard_normal(rng))
        }
        LikelihoodSpec::Softmax { .. } => {
            let p = softmax(g);
            let u = open_uniform(rng);
            let mut acc = 0.0;
            for (c, pc) in p.iter().enumerate() {
                acc += pc;
                if u < acc {
                    return Target::Class(c);
                }
            }
            Target::Class(p.len() - 1)
        }
    }
}

/// Target values in the layout the tape likelihood expects: a column of
/// reals, or a one-hot matrix.
pub(crate) fn target_matrix(targets: &Targets, spec: &LikelihoodSpec) -> Result<DMatrix<f64>> {
    match (targets, spec) {
        (Targets::Real(y), LikelihoodSpec::Gaussian { .. }) => Ok(DMatrix::from_column_slice(y.len(), 1, y)),
        (Targets::Class { labels, .. }, LikelihoodSpec::Softmax { classes }) => {
            let mut m = DMatrix::zeros(labels.len(), *classes);
            for (i, &l) in labels.iter().enumerate() {
                if l >= *classes {
                    return Err(Error::Input(format!("class index {l} out of range for {classes} classes")));
                }
                m[(i, l)] = 1.0;
            }
            Ok(m)
        }
        _ => Err(Error::Compatibility("targets do not match the likelihood".into())),
    }
}

/// Sum of log-likelihoods of every row of `g` on the tape.
///
/// `log_noise` is the 1×1 log noise variance (Gaussian only); `targets` comes
/// from [`target_matrix`].
pub(crate) fn log_likelihood_sum<'t>(
    spec: &LikelihoodSpec,
    g: Var<'t>,
    targets: Var<'t>,
    log_noise: Option<Var<'t>>,
) -> Var<'t> {
    let rows = g.shape().0 as f64;
    match spec {
        LikelihoodSpec::Gaussian { .. } => {
            let log_noise = log_noise.expect("Gaussian likelihood needs a noise parameter");
            let sq = (targets - g).square().sum();
            let quad = sq * (-log_noise).exp().scale(0.5);
            -(quad + log_noise.scale(0.5 * rows)) - 0.5 * rows * LN_2PI
        }
        LikelihoodSpec::Softmax { .. } => (g * targets).sum() - g.logsumexp_rows().sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tape;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_at_mean() {
        let spec = LikelihoodSpec::Gaussian { noise_variance: 1.0 };
        let v = log_likelihood(Target::Real(0.3), &[0.3], &spec).unwrap();
        assert_relative_eq!(v, -0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-15);
    }

    #[test]
    fn uniform_logits() {
        let spec = LikelihoodSpec::Softmax { classes: 10 };
        let v = log_likelihood(Target::Class(4), &[0.7; 10], &spec).unwrap();
        assert_relative_eq!(v, (0.1f64).ln(), epsilon = 1e-14);
    }

    #[test]
    fn class_out_of_range() {
        let spec = LikelihoodSpec::Softmax { classes: 3 };
        assert!(matches!(log_likelihood(Target::Class(3), &[0.0; 3], &spec), Err(Error::Input(_))));
    }

    #[test]
    fn softmax_gradient_is_onehot_minus_probabilities() {
        let spec = LikelihoodSpec::Softmax { classes: 4 };
        let g = [0.3, -1.2, 2.0, 0.1];
        let h = 1e-6;
        let p = softmax(&g);
        for k in 0..4 {
            let (mut a, mut b) = (g, g);
            a[k] += h;
            b[k] -= h;
            let fd = (log_likelihood(Target::Class(2), &a, &spec).unwrap()
                - log_likelihood(Target::Class(2), &b, &spec).unwrap())
                / (2.0 * h);
            let expected = if k == 2 { 1.0 } else { 0.0 } - p[k];
            assert!((fd - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_shift_invariance_and_normalization() {
        let spec = LikelihoodSpec::Softmax { classes: 5 };
        let g = [0.5, -3.0, 1.25, 0.0, 7.0];
        let shifted: Vec<f64> = g.iter().map(|v| v + 123.0).collect();
        let mut total = 0.0;
        for c in 0..5 {
            let a = log_likelihood(Target::Class(c), &g, &spec).unwrap();
            let b = log_likelihood(Target::Class(c), &shifted, &spec).unwrap();
            assert!((a - b).abs() < 1e-12);
            total += a.exp();
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_maximized_at_target() {
        let spec = LikelihoodSpec::Gaussian { noise_variance: 0.3 };
        let h = 1e-5;
        let f = |g: f64| log_likelihood(Target::Real(1.2), &[g], &spec).unwrap();
        assert!(((f(1.2 + h) - f(1.2 - h)) / (2.0 * h)).abs() < 1e-9);
        assert!(f(1.2) > f(1.2 + 0.1) && f(1.2) > f(1.2 - 0.1));
    }

    #[test]
    fn gaussian_sampling_collapses() {
        let spec = LikelihoodSpec::Gaussian { noise_variance: 1e-300 };
        let mut rng = stream(&[1]);
        assert_eq!(sample_target(&[0.75], &spec, &mut rng), Target::Real(0.75));
    }

    #[test]
    fn saturated_softmax_sampling() {
        let spec = LikelihoodSpec::Softmax { classes: 3 };
        let mut rng = stream(&[2]);
        let hits = (0..10_000)
            .filter(|_| sample_target(&[0.0, 50.0, 0.0], &spec, &mut rng) == Target::Class(1))
            .count();
        assert_eq!(hits, 10_000);
    }

    #[test]
    fn fair_coin_sampling() {
        let spec = LikelihoodSpec::Softmax { classes: 2 };
        let mut rng = stream(&[3]);
        let n = 100_000;
        let zeros = (0..n).filter(|_| sample_target(&[0.0, 0.0], &spec, &mut rng) == Target::Class(0)).count();
        let se = (0.25 / n as f64).sqrt();
        assert!((zeros as f64 / n as f64 - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn tape_sum_matches_pointwise() {
        let tape = Tape::new();
        let gauss = LikelihoodSpec::Gaussian { noise_variance: 0.4 };
        let ys = Targets::Real(vec![0.1, -0.5, 2.0]);
        let g = DMatrix::from_column_slice(3, 1, &[0.0, 0.2, 1.5]);
        let v = log_likelihood_sum(
            &gauss,
            tape.constant(g.clone()),
            tape.constant(target_matrix(&ys, &gauss).unwrap()),
            Some(tape.scalar(0.4f64.ln())),
        );
        let expected: f64 = (0..3)
            .map(|i| log_likelihood(ys.get(i), &[g[(i, 0)]], &gauss).unwrap())
            .sum();
        assert_relative_eq!(v.scalar(), expected, epsilon = 1e-12);

        let soft = LikelihoodSpec::Softmax { classes: 3 };
        let ys = Targets::Class {
            labels: vec![2, 0],
            classes: vec!["a".into(), "b".into(), "c".into()],
        };
        let g = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, -1.0, 0.5, 2.0]);
        let v = log_likelihood_sum(&soft, tape.constant(g.clone()), tape.constant(target_matrix(&ys, &soft).unwrap()), None);
        let expected: f64 = (0..2)
            .map(|i| log_likelihood(ys.get(i), g.row(i).transpose().as_slice(), &soft).unwrap())
            .sum();
        assert_relative_eq!(v.scalar(), expected, epsilon = 1e-12);
    }
}
