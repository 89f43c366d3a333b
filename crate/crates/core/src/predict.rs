//! Monte-Carlo prediction and Bhattacharyya certainty margins.
//!
//! Prediction draws `S` joint samples of the latent values, weights and
//! spectra from the variational posterior, then builds `T` predictive draws
//! by picking a sample uniformly and drawing a target from the likelihood.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;

use crate::data::{Dataset, Target, Targets};
use crate::diffcore::Tape;
use crate::error::{Error, Result};
use crate::kernels::Inputs;
use crate::likelihood::{sample_target, softmax, LikelihoodSpec};
use crate::model::{Model, SampleNoise};
use crate::rng::{normal_matrix, stream, tag};

/// Variances are floored here before the Bhattacharyya ratio terms.
pub const VARIANCE_FLOOR: f64 = 1e-12;

const CHUNK: usize = 512;

/// Predictive draws for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSampleSet {
    pub targets: Vec<Target>,
    /// Softmax probabilities of the forward pass behind each draw (classification only).
    pub probabilities: Option<Vec<Vec<f64>>>,
}

impl PosteriorSampleSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn real_values(&self) -> Result<Vec<f64>> {
        self.targets
            .iter()
            .map(|t| match t {
                Target::Real(v) => Ok(*v),
                Target::Class(_) => Err(Error::Compatibility("class draws have no real value".into())),
            })
            .collect()
    }

    /// Mean class probabilities over the draws.
    pub fn mean_probabilities(&self) -> Result<Vec<f64>> {
        let probs = self.class_probabilities()?;
        let k = probs[0].len();
        let t = probs.len() as f64;
        Ok((0..k).map(|c| probs.iter().map(|p| p[c]).sum::<f64>() / t).collect())
    }

    /// Gaussian fit `(mean, variance)` of each class's sampled probability.
    pub fn class_fits(&self) -> Result<Vec<(f64, f64)>> {
        let probs = self.class_probabilities()?;
        let k = probs[0].len();
        (0..k)
            .map(|c| {
                let v: Vec<f64> = probs.iter().map(|p| p[c]).collect();
                posterior_mean_var(&v)
            })
            .collect()
    }

    fn class_probabilities(&self) -> Result<&Vec<Vec<f64>>> {
        match &self.probabilities {
            Some(p) if !p.is_empty() => Ok(p),
            _ => Err(Error::Compatibility("sample set has no class probabilities".into())),
        }
    }
}

fn check_model(model: &Model) -> Result<()> {
    model.check_finite().map_err(|e| Error::Numerical(format!("model state: {e}")))
}

/// Network outputs of `S` posterior samples at every input: one `N × d_L`
/// matrix per sample. Noise is keyed by input index, so an input's outputs
/// do not depend on what else is in `x`.
pub fn predictive_outputs(model: &Model, x: &Inputs, samples: usize, seed: u64) -> Result<Vec<DMatrix<f64>>> {
    check_model(model)?;
    if samples == 0 {
        return Err(Error::Config("samples must be positive".into()));
    }
    let n = x.len();
    let feats = model.features(x)?;
    let shapes = model.noise_shapes();
    let layer_noise: Vec<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> = (0..samples)
        .map(|s| {
            shapes
                .iter()
                .enumerate()
                .map(|(l, &((er, ec), (tr, tc)))| {
                    let key = |kind| [seed, tag::PREDICT, kind, s as u64, l as u64];
                    (normal_matrix(er, ec, &key(tag::WEIGHTS)), normal_matrix(tr, tc, &key(tag::SPECTRA)))
                })
                .unzip()
        })
        .collect();
    let d0 = model.latent_dim();
    let mut out = vec![DMatrix::zeros(n, model.output_dim()); samples];
    let mut start = 0;
    while start < n {
        let rows: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
        let chunk = feats.select(&rows);
        let tape = Tape::new();
        let b = model.store.bind_constant(&tape);
        let base = model.latent_base(&b, &chunk, &tape)?;
        for (s, (weights, spectra)) in layer_noise.iter().enumerate() {
            let latent = model.gp.as_ref().map(|_| {
                let mut m = DMatrix::zeros(rows.len(), d0);
                for (r, &i) in rows.iter().enumerate() {
                    m.row_mut(r)
                        .copy_from(&normal_matrix(1, d0, &[seed, tag::PREDICT, tag::LATENT, s as u64, i as u64]));
                }
                m
            });
            let noise = SampleNoise { latent, weights: weights.clone(), spectra: spectra.clone() };
            let g = model.sample_output(&b, &base, &noise)?.value();
            out[s].rows_mut(start, rows.len()).copy_from(&g);
        }
        start += rows.len();
    }
    Ok(out)
}

/// `T` predictive draws at every input from `S` posterior samples.
pub fn posterior_samples(model: &Model, x: &Inputs, samples: usize, draws: usize, seed: u64) -> Result<Vec<PosteriorSampleSet>> {
    let outputs = predictive_outputs(model, x, samples, seed)?;
    Ok(mixture_draws(&outputs, &model.likelihood(), draws, seed))
}

/// Draw targets from the equal-weight mixture of per-sample likelihoods.
pub fn mixture_draws(outputs: &[DMatrix<f64>], spec: &LikelihoodSpec, draws: usize, seed: u64) -> Vec<PosteriorSampleSet> {
    let n = outputs.first().map_or(0, |o| o.nrows());
    let classification = matches!(spec, LikelihoodSpec::Softmax { .. });
    (0..n)
        .map(|i| {
            let mut pick = stream(&[seed, tag::MIXTURE, i as u64]);
            let mut target_rng = stream(&[seed, tag::TARGET, i as u64]);
            let mut targets = Vec::with_capacity(draws);
            let mut probs = classification.then(|| Vec::with_capacity(draws));
            for _ in 0..draws {
                let s = pick.random_range(0..outputs.len());
                let g: Vec<f64> = outputs[s].row(i).iter().copied().collect();
                targets.push(sample_target(&g, spec, &mut target_rng));
                if let Some(p) = probs.as_mut() {
                    p.push(softmax(&g));
                }
            }
            PosteriorSampleSet { targets, probabilities: probs }
        })
        .collect()
}

/// Sample mean and unbiased sample variance.
pub fn posterior_mean_var(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: samples.len() });
    }
    let t = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / t;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0);
    Ok((mean, var))
}

/// Bhattacharyya distance between `N(mu1, var1)` and `N(mu2, var2)`.
pub fn bhattacharyya(mu1: f64, var1: f64, mu2: f64, var2: f64) -> Result<f64> {
    if !(var1 > 0.0) || !(var2 > 0.0) {
        return Err(Error::Input(format!("variances must be positive, got {var1} and {var2}")));
    }
    let ratio = 0.25 * (var1 / var2 + var2 / var1 + 2.0);
    Ok(0.25 * ratio.ln() + 0.25 * (mu1 - mu2).powi(2) / (var1 + var2))
}

/// Distance between the two most confident classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margin {
    pub first: usize,
    pub second: usize,
    pub distance: f64,
    /// A variance was raised to [`VARIANCE_FLOOR`].
    pub floored: bool,
}

/// Bhattacharyya distance between the class with the highest mean and the runner-up.
pub fn certainty_margin(fits: &[(f64, f64)]) -> Result<Margin> {
    if fits.len() < 2 {
        return Err(Error::Config(format!("certainty margin needs at least 2 classes, got {}", fits.len())));
    }
    let mut order: Vec<usize> = (0..fits.len()).collect();
    order.sort_by(|&a, &b| fits[b].0.total_cmp(&fits[a].0).then(a.cmp(&b)));
    let (first, second) = (order[0], order[1]);
    let floor = |v: f64| v.max(VARIANCE_FLOOR);
    let (v1, v2) = (fits[first].1, fits[second].1);
    Ok(Margin {
        first,
        second,
        distance: bhattacharyya(fits[first].0, floor(v1), fits[second].0, floor(v2))?,
        floored: v1 < VARIANCE_FLOOR || v2 < VARIANCE_FLOOR,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub id: usize,
    pub truth: usize,
    pub predicted: usize,
    pub margin: f64,
}

impl ReportRow {
    pub fn correct(&self) -> bool {
        self.truth == self.predicted
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub correct: Vec<usize>,
    pub misclassified: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReport {
    pub classes: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub error_rate: f64,
    /// Mean margin over correctly classified points; absent if there are none.
    pub d_correct: Option<f64>,
    pub d_misclassified: Option<f64>,
    pub histogram: Histogram,
    pub floored: usize,
}

fn mean_of(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn histogram(rows: &[ReportRow], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let max = rows.iter().map(|r| r.margin).fold(0.0, f64::max);
    let upper = if max > 0.0 { max } else { 1.0 };
    let width = upper / bins as f64;
    let edges = (0..=bins).map(|i| i as f64 * width).collect();
    let mut correct = vec![0; bins];
    let mut misclassified = vec![0; bins];
    for r in rows {
        let b = ((r.margin / width) as usize).min(bins - 1);
        if r.correct() {
            correct[b] += 1;
        } else {
            misclassified[b] += 1;
        }
    }
    Histogram { edges, correct, misclassified }
}

impl UncertaintyReport {
    /// Build from per-point sample sets and true labels.
    pub fn from_samples(sets: &[PosteriorSampleSet], labels: &[usize], classes: Vec<String>, bins: usize) -> Result<Self> {
        if sets.len() != labels.len() {
            return Err(Error::shape("uncertainty report", labels.len(), sets.len()));
        }
        let mut rows = Vec::with_capacity(sets.len());
        let mut floored = 0;
        for (id, (set, &truth)) in sets.iter().zip(labels).enumerate() {
            let mean = set.mean_probabilities()?;
            let predicted = argmax(&mean);
            let margin = certainty_margin(&set.class_fits()?)?;
            floored += usize::from(margin.floored);
            rows.push(ReportRow { id, truth, predicted, margin: margin.distance });
        }
        let wrong = rows.iter().filter(|r| !r.correct()).count();
        Ok(Self {
            classes,
            error_rate: if rows.is_empty() { 0.0 } else { wrong as f64 / rows.len() as f64 },
            d_correct: mean_of(rows.iter().filter(|r| r.correct()).map(|r| r.margin)),
            d_misclassified: mean_of(rows.iter().filter(|r| !r.correct()).map(|r| r.margin)),
            histogram: histogram(&rows, bins),
            rows,
            floored,
        })
    }

    pub fn to_text(&self) -> String {
        let label = |c: usize| self.classes.get(c).cloned().unwrap_or_else(|| c.to_string());
        let opt = |v: Option<f64>| v.map_or_else(|| "absent".to_string(), |x| format!("{x:?}"));
        let mut out = String::from("[points]\nid\ttrue\tpredicted\tmargin\n");
        for r in &self.rows {
            writeln!(out, "{}\t{}\t{}\t{:?}", r.id, label(r.truth), label(r.predicted), r.margin).unwrap();
        }
        out.push_str("\n[aggregate]\n");
        writeln!(out, "error_rate\t{:?}", self.error_rate).unwrap();
        writeln!(out, "d_correct\t{}", opt(self.d_correct)).unwrap();
        writeln!(out, "d_misclassified\t{}", opt(self.d_misclassified)).unwrap();
        writeln!(out, "variance_floor_hits\t{}", self.floored).unwrap();
        out.push_str("\n[histogram]\nlower\tupper\tcorrect\tmisclassified\n");
        for b in 0..self.histogram.correct.len() {
            writeln!(
                out,
                "{:?}\t{:?}\t{}\t{}",
                self.histogram.edges[b],
                self.histogram.edges[b + 1],
                self.histogram.correct[b],
                self.histogram.misclassified[b]
            )
            .unwrap();
        }
        out
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-point margins, error rate and margin averages on a classification set.
pub fn uncertainty_report(model: &Model, data: &Dataset, samples: usize, draws: usize, seed: u64, bins: usize) -> Result<UncertaintyReport> {
    let (labels, classes) = match &data.targets {
        Targets::Class { labels, classes } => (labels, classes.clone()),
        Targets::Real(_) => return Err(Error::Compatibility("uncertainty report needs a classification set".into())),
    };
    if !matches!(model.config.likelihood, LikelihoodSpec::Softmax { .. }) {
        return Err(Error::Compatibility("uncertainty report needs a classification model".into()));
    }
    let sets = posterior_samples(model, &data.inputs, samples, draws, seed)?;
    UncertaintyReport::from_samples(&sets, labels, classes, bins)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    ErrorRate(f64),
    Rmse(f64),
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::ErrorRate(_) => "error_rate",
            Metric::Rmse(_) => "rmse",
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            Metric::ErrorRate(v) | Metric::Rmse(v) => *v,
        }
    }
}

/// Error rate of the argmax of mean class probabilities, or RMSE of posterior means.
pub fn evaluate(model: &Model, data: &Dataset, samples: usize, draws: usize, seed: u64) -> Result<Metric> {
    match (&data.targets, model.config.likelihood) {
        (Targets::Class { labels, .. }, LikelihoodSpec::Softmax { .. }) => {
            let sets = posterior_samples(model, &data.inputs, samples, draws, seed)?;
            let mut predicted = Vec::with_capacity(sets.len());
            for s in &sets {
                predicted.push(argmax(&s.mean_probabilities()?));
            }
            Ok(Metric::ErrorRate(error_rate(&predicted, labels)))
        }
        (Targets::Real(y), LikelihoodSpec::Gaussian { .. }) => {
            let sets = posterior_samples(model, &data.inputs, samples, draws, seed)?;
            let means = sets
                .iter()
                .map(|s| posterior_mean_var(&s.real_values()?).map(|m| m.0))
                .collect::<Result<Vec<_>>>()?;
            Ok(Metric::Rmse(rmse(&means, y)))
        }
        _ => Err(Error::Compatibility("checkpoint task does not match the dataset's task".into())),
    }
}

pub fn error_rate(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(truth).filter(|(a, b)| a != b).count() as f64 / truth.len() as f64
}

pub fn rmse(predicted: &[f64], truth: &[f64]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    (predicted.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drf::SpectraOption;
    use crate::kernels::{ArdParams, KernelSpec};
    use crate::model::{ModelConfig, ModelKind};
    use crate::rng::standard_normal;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn drf_model(likelihood: LikelihoodSpec, out: usize) -> Model {
        let config = ModelConfig {
            kind: ModelKind::Drf,
            kernel: KernelSpec::Ard(ArdParams::new(1.0, vec![1.0]).unwrap()),
            widths: vec![1, out],
            features: vec![4],
            likelihood,
            spectra: SpectraOption::VarFixed,
            per_dim_kernel: false,
            jitter: 1e-6,
            lambda_init: 1.0,
            alpha_init: 1.0,
        };
        Model::new(config, None, 0).unwrap()
    }

    #[test]
    fn mean_var_hand_cases() {
        assert_eq!(posterior_mean_var(&[1.0, 1.0, 1.0]).unwrap(), (1.0, 0.0));
        assert_eq!(posterior_mean_var(&[0.0, 2.0]).unwrap(), (1.0, 2.0));
        assert!(matches!(posterior_mean_var(&[1.0]), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn mean_var_of_unit_normals() {
        let mut rng = stream(&[1]);
        let v: Vec<f64> = (0..100_000).map(|_| standard_normal(&mut rng)).collect();
        let (m, s) = posterior_mean_var(&v).unwrap();
        assert!(m.abs() < 0.02 && (s - 1.0).abs() < 0.02);
    }

    #[test]
    fn bhattacharyya_spot_values() {
        assert_eq!(bhattacharyya(0.3, 0.5, 0.3, 0.5).unwrap(), 0.0);
        assert_relative_eq!(bhattacharyya(1.0, 1.0, 0.0, 1.0).unwrap(), 0.125, epsilon = 1e-15);
        assert_relative_eq!(bhattacharyya(0.0, 2.0, 0.0, 1.0).unwrap(), 0.25 * 1.125f64.ln(), epsilon = 1e-15);
        assert!(bhattacharyya(0.0, 0.0, 0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn bhattacharyya_symmetric_nonnegative_monotone(
            m1 in -5.0f64..5.0, m2 in -5.0f64..5.0, v1 in 1e-3f64..10.0, v2 in 1e-3f64..10.0, extra in 0.01f64..3.0
        ) {
            let a = bhattacharyya(m1, v1, m2, v2).unwrap();
            let b = bhattacharyya(m2, v2, m1, v1).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            prop_assert!(a >= -1e-15);
            let gap = (m1 - m2).abs();
            let wider = bhattacharyya(0.0, v1, gap + extra, v2).unwrap();
            prop_assert!(wider > bhattacharyya(0.0, v1, gap, v2).unwrap());
        }

        #[test]
        fn margin_pair_invariant_to_monotone_map(means in proptest::collection::vec(0.0f64..1.0, 3..8)) {
            let fits: Vec<(f64, f64)> = means.iter().map(|m| (*m, 0.01)).collect();
            let mapped: Vec<(f64, f64)> = means.iter().map(|m| (m.exp() * 3.0 + 1.0, 0.01)).collect();
            let a = certainty_margin(&fits).unwrap();
            let b = certainty_margin(&mapped).unwrap();
            prop_assert_eq!((a.first, a.second), (b.first, b.second));
        }
    }

    #[test]
    fn margin_cases() {
        let same = certainty_margin(&[(0.5, 0.01), (0.5, 0.01)]).unwrap();
        assert_eq!(same.distance, 0.0);
        let fits = [(0.7, 0.01), (0.2, 0.01), (0.1, 0.01)];
        let m = certainty_margin(&fits).unwrap();
        assert_eq!((m.first, m.second), (0, 1));
        assert_relative_eq!(m.distance, 0.25 * 0.25 / 0.02, epsilon = 1e-12);
        let shifted: Vec<_> = fits.iter().map(|(a, v)| (a + 5.0, *v)).collect();
        let s = certainty_margin(&shifted).unwrap();
        assert_eq!((s.first, s.second), (0, 1));
        assert!(certainty_margin(&[(1.0, 1.0)]).is_err());
        let collapsed = certainty_margin(&[(0.5, 0.0), (0.5, 0.0)]).unwrap();
        assert!(collapsed.floored && collapsed.distance == 0.0);
    }

    #[test]
    fn collapsed_posterior_gives_constant_draws() {
        let mut model = drf_model(LikelihoodSpec::Gaussian { noise_variance: 1e-300 }, 1);
        let l = model.layers[0];
        model.store.get_mut(l.w_logscale).fill(-400.0);
        model.store.get_mut(l.omega_logscale).fill(-400.0);
        let x = Inputs::Dense(DMatrix::from_row_slice(2, 1, &[0.3, -0.9]));
        let sets = posterior_samples(&model, &x, 5, 20, 3).unwrap();
        let outputs = predictive_outputs(&model, &x, 1, 9).unwrap();
        for (i, s) in sets.iter().enumerate() {
            for v in s.real_values().unwrap() {
                assert!((v - outputs[0][(i, 0)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_logits_sample_fair_classes() {
        let mut model = drf_model(LikelihoodSpec::Softmax { classes: 2 }, 2);
        let l = model.layers[0];
        model.store.get_mut(l.w_mean).fill(0.0);
        model.store.get_mut(l.w_logscale).fill(-400.0);
        let x = Inputs::Dense(DMatrix::from_element(1, 1, 0.2));
        let t = 10_000;
        let set = &posterior_samples(&model, &x, 4, t, 5).unwrap()[0];
        let ones = set.targets.iter().filter(|y| **y == Target::Class(1)).count() as f64 / t as f64;
        assert!((ones - 0.5).abs() < 3.0 * (0.25 / t as f64).sqrt(), "{ones}");
        for p in set.probabilities.as_ref().unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let data = Dataset::new(x, Targets::Class { labels: vec![0], classes: vec!["a".into(), "b".into()] }).unwrap();
        let report = uncertainty_report(&model, &data, 4, 50, 1, 10).unwrap();
        assert!(report.rows.iter().all(|r| r.margin == 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let model = drf_model(LikelihoodSpec::Softmax { classes: 3 }, 3);
        let x = Inputs::Dense(DMatrix::from_row_slice(3, 1, &[0.1, 0.5, -2.0]));
        assert_eq!(posterior_samples(&model, &x, 6, 30, 2).unwrap(), posterior_samples(&model, &x, 6, 30, 2).unwrap());
        // A point's draws do not depend on the rest of the batch.
        let alone = posterior_samples(&model, &x.select(&[0]), 6, 30, 2).unwrap();
        assert_eq!(alone[0], posterior_samples(&model, &x, 6, 30, 2).unwrap()[0]);
    }

    #[test]
    fn nan_parameters_rejected() {
        let mut model = drf_model(LikelihoodSpec::Softmax { classes: 2 }, 2);
        let id = model.layers[0].log_alpha;
        model.store.get_mut(id)[(0, 0)] = f64::NAN;
        let x = Inputs::Dense(DMatrix::zeros(1, 1));
        assert!(matches!(posterior_samples(&model, &x, 2, 2, 0), Err(Error::Numerical(_))));
    }

    fn set_from_probs(probs: Vec<Vec<f64>>) -> PosteriorSampleSet {
        PosteriorSampleSet { targets: vec![Target::Class(0); probs.len()], probabilities: Some(probs) }
    }

    #[test]
    fn report_aggregates() {
        let sure0 = set_from_probs(vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.95, 0.05]]);
        let unsure1 = set_from_probs(vec![vec![0.4, 0.6], vec![0.6, 0.4], vec![0.45, 0.55]]);
        let r = UncertaintyReport::from_samples(&[sure0.clone(), unsure1, sure0], &[0, 1, 0], vec!["x".into(), "y".into()], 4).unwrap();
        assert_eq!(r.rows.iter().filter(|r| r.correct()).count(), 3);
        assert_eq!(r.error_rate, 0.0);
        assert!(r.d_correct.unwrap() > 0.0);
        assert_eq!(r.d_misclassified, None);
        let total: usize = r.histogram.correct.iter().chain(&r.histogram.misclassified).sum();
        assert_eq!(total, 3);
        let text = r.to_text();
        assert!(text.contains("d_misclassified\tabsent"));
        assert!(text.contains("[histogram]"));
    }

    #[test]
    fn metric_arithmetic() {
        assert_eq!(error_rate(&[0, 1, 2], &[0, 1, 2]), 0.0);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(rmse(&[1.0, -1.0], &[0.0, 0.0]), 1.0);
    }

    #[test]
    fn task_mismatch() {
        let model = drf_model(LikelihoodSpec::Softmax { classes: 2 }, 2);
        let data = Dataset::new(Inputs::Dense(DMatrix::zeros(1, 1)), Targets::Real(vec![0.0])).unwrap();
        assert!(matches!(evaluate(&model, &data, 2, 2, 0), Err(Error::Compatibility(_))));
        assert!(matches!(uncertainty_report(&model, &data, 2, 2, 0, 5), Err(Error::Compatibility(_))));
    }
}
