//! Deep random-feature layers.
//!
//! Layer `l` maps `h ∈ R^{d_l}` to `Wᵀ φ(h; Ω)` where `φ` is the random
//! Fourier feature map with `M_l` frequencies and scale `α_l`. Both `W` and
//! `Ω` carry fully factorized Gaussian posteriors, sampled through
//! `W = m + s ⊙ e` and `Ω = η + β ⊙ τ`. The priors are `N(0, 1)` for every
//! weight and `N(0, λ_i)` for every frequency coordinate `i`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diffcore::Var;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::random_features::{rff_map, SpectraMatrix};
use crate::rng::{normal_matrix, tag};

/// How the frequencies `Ω` are treated during inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectraOption {
    /// `Ω` drawn from its prior for every sample; only `Λ` is learned.
    PriorFixed,
    /// Variational `q(Ω)` with noise drawn once for the whole run.
    #[default]
    VarFixed,
    /// Variational `q(Ω)` with noise redrawn every step.
    VarResampled,
}

impl SpectraOption {
    pub fn is_variational(self) -> bool {
        !matches!(self, SpectraOption::PriorFixed)
    }

    pub fn name(self) -> &'static str {
        match self {
            SpectraOption::PriorFixed => "prior-fixed",
            SpectraOption::VarFixed => "var-fixed",
            SpectraOption::VarResampled => "var-resampled",
        }
    }
}

impl std::str::FromStr for SpectraOption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "prior-fixed" => Ok(SpectraOption::PriorFixed),
            "var-fixed" => Ok(SpectraOption::VarFixed),
            "var-resampled" => Ok(SpectraOption::VarResampled),
            other => Err(Error::Config(format!(
                "unknown spectra option '{other}' (expected prior-fixed, var-fixed or var-resampled)"
            ))),
        }
    }
}

/// Store handles of one layer. Shapes: `W` is `2M × d_out`, `Ω` is `d_in × M`,
/// `log λ` is `d_in × 1`, `log α` is `1 × 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DrfLayerState {
    pub input_dim: usize,
    pub num_features: usize,
    pub output_dim: usize,
    pub w_mean: ParamId,
    pub w_logscale: ParamId,
    pub omega_mean: ParamId,
    pub omega_logscale: ParamId,
    pub lambda_log: ParamId,
    pub log_alpha: ParamId,
}

const INIT_SD: f64 = 0.1;

fn block_names(layer: usize) -> [String; 6] {
    ["w_mean", "w_logscale", "omega_mean", "omega_logscale", "log_lambda", "log_alpha"]
        .map(|n| format!("drf.{layer}.{n}"))
}

impl DrfLayerState {
    /// Register layer `layer` near its prior: `m, η ~ N(0, 0.01)`, `s = 1`,
    /// `β = √λ`, with `λ = lambda` and `α = alpha`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        layer: usize,
        input_dim: usize,
        num_features: usize,
        output_dim: usize,
        lambda: f64,
        alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || num_features == 0 || output_dim == 0 {
            return Err(Error::Config(format!(
                "layer {layer}: widths and feature count must be positive (got {input_dim}, {num_features}, {output_dim})"
            )));
        }
        if !(lambda > 0.0) || !(alpha > 0.0) {
            return Err(Error::Config(format!("layer {layer}: lambda and alpha must be positive")));
        }
        let d = 2 * num_features;
        let key = |block: u64| [seed, tag::INIT, layer as u64, block];
        let names = block_names(layer);
        let [w_mean, w_logscale, omega_mean, omega_logscale, lambda_log, log_alpha] = names;
        Ok(Self {
            input_dim,
            num_features,
            output_dim,
            w_mean: store.add(w_mean, normal_matrix(d, output_dim, &key(0)) * INIT_SD),
            w_logscale: store.add(w_logscale, DMatrix::zeros(d, output_dim)),
            omega_mean: store.add(omega_mean, normal_matrix(input_dim, num_features, &key(1)) * INIT_SD),
            omega_logscale: store.add(
                omega_logscale,
                DMatrix::from_element(input_dim, num_features, 0.5 * lambda.ln()),
            ),
            lambda_log: store.add(lambda_log, DMatrix::from_element(input_dim, 1, lambda.ln())),
            log_alpha: store.add(log_alpha, DMatrix::from_element(1, 1, alpha.ln())),
        })
    }

    /// Look up a layer whose blocks are already in `store`.
    pub fn restore(
        store: &ParamStore,
        layer: usize,
        input_dim: usize,
        num_features: usize,
        output_dim: usize,
    ) -> Result<Self> {
        let names = block_names(layer);
        let d = 2 * num_features;
        let shapes = [
            (d, output_dim),
            (d, output_dim),
            (input_dim, num_features),
            (input_dim, num_features),
            (input_dim, 1),
            (1, 1),
        ];
        let mut ids = Vec::with_capacity(6);
        for (name, shape) in names.iter().zip(shapes) {
            let id = store
                .id_of(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter block {name}")))?;
            if store.get(id).shape() != shape {
                return Err(Error::Checkpoint(format!("parameter block {name} has the wrong shape")));
            }
            ids.push(id);
        }
        Ok(Self {
            input_dim,
            num_features,
            output_dim,
            w_mean: ids[0],
            w_logscale: ids[1],
            omega_mean: ids[2],
            omega_logscale: ids[3],
            lambda_log: ids[4],
            log_alpha: ids[5],
        })
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.num_features
    }

    /// Blocks that receive gradients under `option`. `q(Ω)` is unused when
    /// spectra come from the prior.
    pub fn param_ids(&self, option: SpectraOption) -> Vec<ParamId> {
        let mut ids = vec![self.w_mean, self.w_logscale];
        if option.is_variational() {
            ids.extend([self.omega_mean, self.omega_logscale]);
        }
        ids.extend([self.lambda_log, self.log_alpha]);
        ids
    }

    pub fn weights<'t>(&self, b: &Bound<'t>, e: &DMatrix<f64>) -> Var<'t> {
        let m = b.get(self.w_mean);
        m + b.get(self.w_logscale).exp() * m.tape().constant(e.clone())
    }

    /// Frequencies for one sample: `η + β ⊙ τ`, or `√λ ⊙ τ` under the prior.
    pub fn spectra<'t>(&self, b: &Bound<'t>, tau: &DMatrix<f64>, option: SpectraOption) -> Var<'t> {
        let tape = b.get(self.log_alpha).tape();
        let tau = tape.constant(tau.clone());
        if option.is_variational() {
            b.get(self.omega_mean) + b.get(self.omega_logscale).exp() * tau
        } else {
            b.get(self.lambda_log).scale(0.5).exp() * tau
        }
    }

    /// `Wᵀφ(h; Ω)` for every row of `h` (`B × d_in` → `B × d_out`).
    pub fn forward<'t>(&self, b: &Bound<'t>, h: Var<'t>, w: Var<'t>, omega: Var<'t>) -> Var<'t> {
        crate::random_features::rff_features(h, omega, b.get(self.log_alpha)).matmul(w)
    }

    pub fn kl_weights_var<'t>(&self, b: &Bound<'t>) -> Var<'t> {
        let (m, logs) = (b.get(self.w_mean), b.get(self.w_logscale));
        let n = (self.feature_dim() * self.output_dim) as f64;
        ((logs.scale(2.0).exp() + m.square() - logs.scale(2.0)).sum() - n).scale(0.5)
    }

    pub fn kl_spectra_var<'t>(&self, b: &Bound<'t>) -> Var<'t> {
        let (eta, logb, logl) = (b.get(self.omega_mean), b.get(self.omega_logscale), b.get(self.lambda_log));
        let inv_l = (-logl).exp();
        let n = (self.input_dim * self.num_features) as f64;
        let terms = (logb.scale(2.0) - logl).exp() + eta.square() * inv_l + logl - logb.scale(2.0);
        (terms.sum() - n).scale(0.5)
    }

    pub fn kl_weights(&self, store: &ParamStore) -> f64 {
        kl_weights(store.get(self.w_mean), store.get(self.w_logscale))
    }

    pub fn kl_spectra(&self, store: &ParamStore) -> f64 {
        kl_spectra(store.get(self.omega_mean), store.get(self.omega_logscale), store.get(self.lambda_log))
    }
}

/// `m + exp(log s) ⊙ e`.
pub fn reparam_weights(mean: &DMatrix<f64>, logscale: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    reparam(mean, logscale, e, "reparam_weights")
}

/// `η + exp(log β) ⊙ τ`.
pub fn reparam_spectra(mean: &DMatrix<f64>, logscale: &DMatrix<f64>, tau: &DMatrix<f64>) -> Result<SpectraMatrix> {
    Ok(SpectraMatrix {
        omega: reparam(mean, logscale, tau, "reparam_spectra")?,
        layer: 0,
    })
}

fn reparam(mean: &DMatrix<f64>, logscale: &DMatrix<f64>, noise: &DMatrix<f64>, ctx: &str) -> Result<DMatrix<f64>> {
    if mean.shape() != logscale.shape() || mean.shape() != noise.shape() {
        return Err(Error::shape(ctx, format!("{:?}", mean.shape()), format!("{:?}", noise.shape())));
    }
    Ok(mean + logscale.map(f64::exp).component_mul(noise))
}

/// `Wᵀ φ(h; Ω)`.
pub fn layer_forward(h: &[f64], w: &DMatrix<f64>, spectra: &SpectraMatrix, alpha: f64) -> Result<Vec<f64>> {
    if w.nrows() != 2 * spectra.num_frequencies() {
        return Err(Error::shape(
            "layer_forward weights",
            format!("{} rows", 2 * spectra.num_frequencies()),
            format!("{} rows", w.nrows()),
        ));
    }
    let phi = rff_map(h, spectra, alpha)?;
    Ok((0..w.ncols()).map(|c| w.column(c).iter().zip(&phi).map(|(a, b)| a * b).sum()).collect())
}

/// One layer's sampled quantities, for [`feed_forward`].
#[derive(Debug, Clone)]
pub struct LayerSample {
    pub weights: DMatrix<f64>,
    pub spectra: SpectraMatrix,
    pub alpha: f64,
}

/// Compose [`layer_forward`] over every layer; no layers is the identity.
pub fn feed_forward(f: &[f64], layers: &[LayerSample]) -> Result<Vec<f64>> {
    let mut h = f.to_vec();
    for (l, s) in layers.iter().enumerate() {
        h = layer_forward(&h, &s.weights, &s.spectra, s.alpha).map_err(|e| match e {
            Error::Shape { context, expected, got } => Error::Shape {
                context: format!("layer {l}: {context}"),
                expected,
                got,
            },
            other => other,
        })?;
    }
    Ok(h)
}

/// `KL(N(m, s²) ‖ N(0, 1))` summed over entries.
pub fn kl_weights(mean: &DMatrix<f64>, logscale: &DMatrix<f64>) -> f64 {
    mean.iter()
        .zip(logscale.iter())
        .map(|(m, ls)| 0.5 * ((2.0 * ls).exp() + m * m - 1.0 - 2.0 * ls))
        .sum()
}

/// `KL(N(η, β²) ‖ N(0, λ_i))` summed over entries; row `i` uses `λ_i`.
pub fn kl_spectra(mean: &DMatrix<f64>, logscale: &DMatrix<f64>, lambda_log: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..mean.nrows() {
        let ll = lambda_log[(i, 0)];
        let inv = (-ll).exp();
        for j in 0..mean.ncols() {
            let (eta, lb) = (mean[(i, j)], logscale[(i, j)]);
            total += 0.5 * ((2.0 * lb - ll).exp() + eta * eta * inv - 1.0 + ll - 2.0 * lb);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tape;
    use crate::random_features::sample_spectra;
    use crate::rng::{standard_normal, stream};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gaussian_logpdf(x: f64, mean: f64, var: f64) -> f64 {
        -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
    }

    #[test]
    fn zero_noise_gives_means() {
        let m = DMatrix::from_row_slice(2, 2, &[0.1, -0.2, 0.3, 0.4]);
        let ls = DMatrix::from_element(2, 2, 0.7);
        assert_eq!(reparam_weights(&m, &ls, &DMatrix::zeros(2, 2)).unwrap(), m);
        assert_eq!(reparam_spectra(&m, &ls, &DMatrix::zeros(2, 2)).unwrap().omega, m);
        let tiny = DMatrix::from_element(2, 2, -800.0);
        assert_eq!(reparam_weights(&m, &tiny, &DMatrix::from_element(2, 2, 3.0)).unwrap(), m);
        assert!(reparam_weights(&m, &ls, &DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn reparam_moments() {
        let m = DMatrix::from_element(1, 1, 0.4);
        let ls = DMatrix::from_element(1, 1, 0.6f64.ln());
        let mut rng = stream(&[21]);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| reparam_weights(&m, &ls, &DMatrix::from_element(1, 1, standard_normal(&mut rng))).unwrap()[(0, 0)])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 0.4).abs() < 3.0 * (0.36 / n as f64).sqrt());
        // Standard error of the sample variance of a Gaussian: σ²·√(2/(n−1)).
        assert!((var - 0.36).abs() < 3.0 * 0.36 * (2.0 / (n - 1) as f64).sqrt());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let s = sample_spectra(&[1.0, 1.0], 3, 0, 0).unwrap();
        let out = layer_forward(&[0.5, 0.2], &DMatrix::zeros(6, 2), &s, 1.0).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn single_cos_weight_at_origin() {
        let s = sample_spectra(&[1.0], 4, 0, 0).unwrap();
        let mut w = DMatrix::zeros(8, 1);
        w[(2, 0)] = 1.5;
        let out = layer_forward(&[0.0], &w, &s, 2.0).unwrap();
        assert_relative_eq!(out[0], 1.5 * (2.0f64 / 4.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn prior_weights_reproduce_feature_covariance() {
        let s = sample_spectra(&[1.0, 0.5], 5, 3, 0).unwrap();
        let (h, h2) = ([0.3, -0.4], [-0.8, 0.9]);
        let phi = rff_map(&h, &s, 1.0).unwrap();
        let phi2 = rff_map(&h2, &s, 1.0).unwrap();
        let target: f64 = phi.iter().zip(&phi2).map(|(a, b)| a * b).sum();
        let mut rng = stream(&[4]);
        let n = 10_000;
        let mut prods = Vec::with_capacity(n);
        for _ in 0..n {
            let w = DMatrix::from_fn(10, 1, |_, _| standard_normal(&mut rng));
            let a = layer_forward(&h, &w, &s, 1.0).unwrap()[0];
            let b = layer_forward(&h2, &w, &s, 1.0).unwrap()[0];
            prods.push(a * b);
        }
        let mean = prods.iter().sum::<f64>() / n as f64;
        let sd = (prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - target).abs() < 3.0 * sd / (n as f64).sqrt(), "{mean} vs {target}");
    }

    #[test]
    fn two_layer_hand_computation() {
        // Layer 0: one frequency ω = (1, 0), α = 2, W = [[1], [1]]:
        //   h1 = √2·(cos x₀ + sin x₀).
        // Layer 1: one frequency ω = 0.5, α = 1, W = [[2], [0]]:
        //   out = 2·cos(0.5·h1).
        let l0 = LayerSample {
            weights: DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            spectra: SpectraMatrix { omega: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]), layer: 0 },
            alpha: 2.0,
        };
        let l1 = LayerSample {
            weights: DMatrix::from_row_slice(2, 1, &[2.0, 0.0]),
            spectra: SpectraMatrix { omega: DMatrix::from_row_slice(1, 1, &[0.5]), layer: 1 },
            alpha: 1.0,
        };
        let x = [0.7, 5.0];
        let h1 = 2f64.sqrt() * (0.7f64.cos() + 0.7f64.sin());
        let expected = 2.0 * (0.5 * h1).cos();
        let got = feed_forward(&x, &[l0.clone(), l1]).unwrap();
        assert_relative_eq!(got[0], expected, epsilon = 1e-14);
        assert_eq!(feed_forward(&x, &[l0.clone()]).unwrap(), layer_forward(&x, &l0.weights, &l0.spectra, 2.0).unwrap());
        assert_eq!(feed_forward(&x, &[]).unwrap(), x.to_vec());
    }

    #[test]
    fn chain_mismatch_reports_layer() {
        let l0 = LayerSample {
            weights: DMatrix::zeros(2, 3),
            spectra: SpectraMatrix { omega: DMatrix::zeros(1, 1), layer: 0 },
            alpha: 1.0,
        };
        let l1 = LayerSample {
            weights: DMatrix::zeros(2, 1),
            spectra: SpectraMatrix { omega: DMatrix::zeros(2, 1), layer: 1 },
            alpha: 1.0,
        };
        match feed_forward(&[0.0], &[l0, l1]) {
            Err(Error::Shape { context, .. }) => assert!(context.starts_with("layer 1")),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn kl_scalar_cases() {
        let z = DMatrix::zeros(2, 3);
        assert_eq!(kl_weights(&z, &z), 0.0);
        assert_relative_eq!(kl_weights(&DMatrix::from_element(1, 1, 1.0), &DMatrix::zeros(1, 1)), 0.5);
        let ll = DMatrix::from_element(2, 1, 0.3);
        let lb = DMatrix::from_element(2, 3, 0.15);
        assert!(kl_spectra(&z, &lb, &ll).abs() < 1e-15);
    }

    #[test]
    fn kl_monte_carlo() {
        let m: DMatrix<f64> = DMatrix::from_row_slice(1, 2, &[0.3, -0.5]);
        let ls: DMatrix<f64> = DMatrix::from_row_slice(1, 2, &[-0.2, 0.4]);
        let ll: DMatrix<f64> = DMatrix::from_element(1, 1, 0.5);
        let mut rng = stream(&[31]);
        let n = 1_000_000;
        let (mut wsum, mut wsq, mut ssum, mut ssq) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let (mut kw, mut ks) = (0.0, 0.0);
            for j in 0..2 {
                let s = ls[(0, j)].exp();
                let x = m[(0, j)] + s * standard_normal(&mut rng);
                kw += gaussian_logpdf(x, m[(0, j)], s * s) - gaussian_logpdf(x, 0.0, 1.0);
                ks += gaussian_logpdf(x, m[(0, j)], s * s) - gaussian_logpdf(x, 0.0, ll[(0, 0)].exp());
            }
            wsum += kw;
            wsq += kw * kw;
            ssum += ks;
            ssq += ks * ks;
        }
        let nf = n as f64;
        let se = |sum: f64, sq: f64| ((sq / nf - (sum / nf).powi(2)) / nf).sqrt();
        assert!((wsum / nf - kl_weights(&m, &ls)).abs() < 3.0 * se(wsum, wsq));
        assert!((ssum / nf - kl_spectra(&m, &ls, &ll)).abs() < 3.0 * se(ssum, ssq));
    }

    fn layer() -> (ParamStore, DrfLayerState) {
        let mut store = ParamStore::new();
        let l = DrfLayerState::new(&mut store, 0, 2, 3, 2, 1.3, 0.8, 5).unwrap();
        (store, l)
    }

    #[test]
    fn tape_kl_matches_plain() {
        let (mut store, l) = layer();
        store.get_mut(l.w_logscale)[(1, 1)] = 0.4;
        store.get_mut(l.omega_logscale)[(0, 2)] = -0.3;
        let tape = Tape::new();
        let b = store.bind_constant(&tape);
        assert_relative_eq!(l.kl_weights_var(&b).scalar(), l.kl_weights(&store), epsilon = 1e-12);
        assert_relative_eq!(l.kl_spectra_var(&b).scalar(), l.kl_spectra(&store), epsilon = 1e-12);
    }

    #[test]
    fn initialization_is_near_prior() {
        let (store, l) = layer();
        assert!(store.get(l.w_mean).iter().all(|v| v.abs() < 0.6));
        assert!(store.get(l.w_logscale).iter().all(|v| *v == 0.0));
        assert!(l.kl_weights(&store) < 0.5);
        assert!(l.kl_spectra(&store) < 0.5);
        let other = layer().0;
        assert_eq!(store, other);
    }

    #[test]
    fn tape_forward_matches_plain() {
        let (store, l) = layer();
        let e = DMatrix::from_fn(6, 2, |i, j| 0.1 * (i + 3 * j) as f64 - 0.4);
        let tau = DMatrix::from_fn(2, 3, |i, j| 0.2 * (i * 3 + j) as f64 - 0.5);
        let h = DMatrix::from_row_slice(2, 2, &[0.3, 0.9, -1.2, 0.4]);
        for option in [SpectraOption::VarFixed, SpectraOption::PriorFixed] {
            let tape = Tape::new();
            let b = store.bind_constant(&tape);
            let w = l.weights(&b, &e);
            let omega = l.spectra(&b, &tau, option);
            let out = l.forward(&b, tape.constant(h.clone()), w, omega).value();
            let wp = reparam_weights(store.get(l.w_mean), store.get(l.w_logscale), &e).unwrap();
            let sp = if option.is_variational() {
                reparam_spectra(store.get(l.omega_mean), store.get(l.omega_logscale), &tau).unwrap()
            } else {
                let sd = store.get(l.lambda_log).map(|v| (0.5 * v).exp());
                SpectraMatrix { omega: DMatrix::from_fn(2, 3, |i, j| sd[(i, 0)] * tau[(i, j)]), layer: 0 }
            };
            for r in 0..2 {
                let row: Vec<f64> = h.row(r).iter().copied().collect();
                let plain = layer_forward(&row, &wp, &sp, 0.8).unwrap();
                for c in 0..2 {
                    assert_relative_eq!(out[(r, c)], plain[c], epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn fixed_noise_is_bit_reproducible() {
        let (store, l) = layer();
        let e = DMatrix::from_element(6, 2, 0.3);
        let tau = DMatrix::from_element(2, 3, -0.7);
        let run = || {
            let tape = Tape::new();
            let b = store.bind_constant(&tape);
            let h = tape.constant(DMatrix::from_row_slice(1, 2, &[0.1, 0.2]));
            l.forward(&b, h, l.weights(&b, &e), l.spectra(&b, &tau, SpectraOption::VarFixed)).value()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn two_layer_gradients() {
        let mut store = ParamStore::new();
        let l0 = DrfLayerState::new(&mut store, 0, 2, 3, 2, 1.0, 1.1, 1).unwrap();
        let l1 = DrfLayerState::new(&mut store, 1, 2, 2, 1, 0.7, 0.9, 1).unwrap();
        let mut rng = stream(&[9]);
        for v in store.values_mut() {
            for x in v.iter_mut() {
                *x += 0.2 * standard_normal(&mut rng);
            }
        }
        let mut noise = |r, c| DMatrix::from_fn(r, c, |_, _| standard_normal(&mut rng));
        let (e0, t0, e1, t1) = (noise(6, 2), noise(2, 3), noise(4, 1), noise(2, 2));
        let x = DMatrix::from_row_slice(2, 2, &[0.4, -0.3, 1.1, 0.8]);
        for option in [SpectraOption::VarFixed, SpectraOption::PriorFixed] {
            let objective = |b: &Bound<'_>| {
                let tape = b.get(l0.log_alpha).tape();
                let h = l0.forward(b, tape.constant(x.clone()), l0.weights(b, &e0), l0.spectra(b, &t0, option));
                let out = l1.forward(b, h, l1.weights(b, &e1), l1.spectra(b, &t1, option));
                (out.sum() + l0.kl_weights_var(b) + l1.kl_spectra_var(b)).scalar()
            };
            let tape = Tape::new();
            let b = store.bind(&tape);
            let h = l0.forward(&b, tape.constant(x.clone()), l0.weights(&b, &e0), l0.spectra(&b, &t0, option));
            let out = l1.forward(&b, h, l1.weights(&b, &e1), l1.spectra(&b, &t1, option));
            let total = out.sum() + l0.kl_weights_var(&b) + l1.kl_spectra_var(&b);
            let grads = tape.grad(total, b.vars()).unwrap();
            let step = 1e-6;
            for id in store.ids() {
                for idx in 0..store.get(id).len() {
                    let eval = |delta: f64| {
                        let mut s = store.clone();
                        s.get_mut(id)[idx] += delta;
                        let t = Tape::new();
                        objective(&s.bind_constant(&t))
                    };
                    let fd = (eval(step) - eval(-step)) / (2.0 * step);
                    let g = grads[id.index()][idx];
                    assert!((fd - g).abs() <= 1e-4 * fd.abs().max(1e-2), "{} [{idx}] {g} vs {fd}", store.name(id));
                }
            }
        }
    }

    #[test]
    fn option_parsing() {
        assert_eq!("VAR-RESAMPLED".parse::<SpectraOption>().unwrap(), SpectraOption::VarResampled);
        assert_eq!("prior_fixed".parse::<SpectraOption>().unwrap(), SpectraOption::PriorFixed);
        assert!("fixed".parse::<SpectraOption>().is_err());
    }

    #[test]
    fn restore_checks_shapes() {
        let (store, l) = layer();
        assert_eq!(DrfLayerState::restore(&store, 0, 2, 3, 2).unwrap(), l);
        assert!(matches!(DrfLayerState::restore(&store, 0, 2, 4, 2), Err(Error::Checkpoint(_))));
        assert!(matches!(DrfLayerState::restore(&store, 1, 2, 3, 2), Err(Error::Checkpoint(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn kl_terms_nonnegative(m in -3.0f64..3.0, ls in -3.0f64..3.0, ll in -3.0f64..3.0) {
            let mm = DMatrix::from_element(1, 1, m);
            let lsm = DMatrix::from_element(1, 1, ls);
            prop_assert!(kl_weights(&mm, &lsm) >= 0.0);
            prop_assert!(kl_spectra(&mm, &lsm, &DMatrix::from_element(1, 1, ll)) >= -1e-15);
            if m.abs() > 1e-3 {
                prop_assert!(kl_weights(&mm, &lsm) > 0.0);
            }
        }
    }
}
