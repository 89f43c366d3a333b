//! Fast self-test battery behind `gpdrf check`.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use crate::data::{Dataset, Targets};
use crate::inference::{elbo_estimate, elbo_gradient, select_inducing, InducingStrategy, NoiseBank};
use crate::kernels::{ArdParams, Inputs, KernelSpec};
use crate::likelihood::LikelihoodSpec;
use crate::model::{Model, ModelConfig, ModelKind};
use crate::random_features::{rff_map, sample_spectra};
use crate::rng::{standard_normal, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckReport {
    pub lines: Vec<CheckLine>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            let status = if l.passed { "PASS" } else { "FAIL" };
            writeln!(out, "{status} {} ({:.2}s): {}", l.name, l.seconds, l.detail).unwrap();
        }
        out
    }
}

type Outcome = std::result::Result<String, String>;

fn timed(name: &'static str, f: impl FnOnce() -> Outcome) -> CheckLine {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CheckLine { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Run every check; `checkpoint` additionally validates a saved model.
pub fn run_checks(cfg: &RunConfig, checkpoint: Option<&Path>) -> CheckReport {
    let mut report = CheckReport::default();
    report.lines.push(timed("rff-kernel", || rff_check(cfg)));
    report.lines.push(timed("gradient", || gradient_check(cfg)));
    report.lines.push(timed("kl-nonnegative", || kl_check(cfg)));
    if let Some(path) = checkpoint {
        report.lines.push(timed("checkpoint", || {
            Checkpoint::read(path).map(|c| format!("{} model readable", c.model.config.kind.name())).map_err(|e| e.to_string())
        }));
    }
    report
}

/// Root-mean-square error of the feature inner product against the exact
/// kernel, averaged over independent frequency draws.
fn rff_check(cfg: &RunConfig) -> Outcome {
    let m = cfg.features.as_ref().and_then(|f| f.first().copied()).unwrap_or(cfg.num_features);
    let dim = cfg.latent_dim.max(1);
    let (alpha, lambda) = (cfg.alpha_init, cfg.lambda_init);
    if m == 0 || !(alpha > 0.0) || !(lambda > 0.0) {
        return Err(format!("invalid feature settings (M={m}, alpha={alpha}, lambda={lambda})"));
    }
    let mut rng = stream(&[cfg.seed, 0xC4EC]);
    let points: Vec<Vec<f64>> =
        (0..8).map(|_| (0..dim).map(|_| standard_normal(&mut rng) / lambda.sqrt()).collect()).collect();
    let draws = 20;
    let mut total = 0.0;
    for r in 0..draws {
        let spectra = sample_spectra(&vec![lambda; dim], m, cfg.seed.wrapping_add(r), 0).map_err(|e| e.to_string())?;
        let phi: Vec<Vec<f64>> = points
            .iter()
            .map(|p| rff_map(p, &spectra, alpha))
            .collect::<crate::Result<_>>()
            .map_err(|e| e.to_string())?;
        let mut sq = 0.0;
        let mut pairs = 0;
        for i in 0..points.len() {
            for j in i..points.len() {
                let d2: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum();
                let exact = alpha * (-0.5 * lambda * d2).exp();
                let approx: f64 = phi[i].iter().zip(&phi[j]).map(|(a, b)| a * b).sum();
                sq += (approx - exact).powi(2);
                pairs += 1;
            }
        }
        total += (sq / pairs as f64).sqrt();
    }
    let rms = total / draws as f64;
    let tol = 2.0 * alpha / (m as f64).sqrt();
    let msg = format!("M={m}: mean RMS error {rms:.4} (tolerance {tol:.4})");
    if rms <= tol {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn tiny(cfg: &RunConfig) -> crate::Result<(Model, Dataset)> {
    let n = 4;
    let x = DMatrix::from_fn(n, 1, |i, _| -1.0 + 2.0 * i as f64 / (n - 1) as f64);
    let y = (0..n).map(|i| (3.0 * x[(i, 0)]).sin()).collect();
    let data = Dataset::new(Inputs::Dense(x), Targets::Real(y))?;
    let kernel = KernelSpec::Ard(ArdParams::new(1.0, vec![0.5])?);
    let (widths, features) = match cfg.model {
        ModelKind::Gp => (vec![1], vec![]),
        ModelKind::GpDrf | ModelKind::Drf => (vec![1, 2, 1], vec![3, 2]),
    };
    let config = ModelConfig {
        kind: cfg.model,
        kernel: kernel.clone(),
        widths,
        features,
        likelihood: LikelihoodSpec::Gaussian { noise_variance: 0.2 },
        spectra: cfg.spectra,
        per_dim_kernel: false,
        jitter: 1e-6,
        lambda_init: cfg.lambda_init,
        alpha_init: cfg.alpha_init,
    };
    let z = match cfg.model.has_gp() {
        true => Some(select_inducing(&data.inputs, 2, InducingStrategy::Random, &kernel, cfg.seed)?),
        false => None,
    };
    Ok((Model::new(config, z, cfg.seed)?, data))
}

fn perturb(model: &mut Model, seed: u64, size: f64) {
    let mut rng = stream(&[seed, 0xC4EC, 1]);
    for v in model.store.values_mut() {
        for x in v.iter_mut() {
            *x += size * standard_normal(&mut rng);
        }
    }
}

fn gradient_check(cfg: &RunConfig) -> Outcome {
    let (mut model, data) = tiny(cfg).map_err(|e| e.to_string())?;
    perturb(&mut model, cfg.seed, 0.2);
    let all: Vec<usize> = (0..data.len()).collect();
    let noise = NoiseBank::new(&model, 2, cfg.seed, false).draw(0, 0, &all);
    let (_, grads) = elbo_gradient(&model, &data, &all, &noise).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let mut worst = (0.0_f64, String::new());
    let mut checked = 0;
    for id in model.active_params() {
        for idx in 0..model.store.get(id).len() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.store.get_mut(id)[idx] += delta;
                elbo_estimate(&m, &data, &all, &noise).map(|t| t.total)
            };
            let fd = match (eval(h), eval(-h)) {
                (Ok(a), Ok(b)) => (a - b) / (2.0 * h),
                (Err(e), _) | (_, Err(e)) => return Err(e.to_string()),
            };
            let err = (fd - grads[id.index()][idx]).abs() / fd.abs().max(1e-2);
            if err > worst.0 {
                worst = (err, format!("{}[{idx}]", model.store.name(id)));
            }
            checked += 1;
        }
    }
    let msg = format!("{checked} entries, worst relative error {:.2e} at {}", worst.0, worst.1);
    if worst.0 <= 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn set_to_prior(model: &mut Model) -> crate::Result<()> {
    if let Some(gp) = model.gp.clone() {
        model.store.get_mut(gp.mu).fill(0.0);
        for j in 0..gp.latent_dim() {
            let k = gp.inducing_gram(&model.store, j)?.entries;
            gp.set_covariance(&mut model.store, j, &k)?;
        }
    }
    for layer in model.layers.clone() {
        model.store.get_mut(layer.w_mean).fill(0.0);
        model.store.get_mut(layer.w_logscale).fill(0.0);
        model.store.get_mut(layer.omega_mean).fill(0.0);
        let lambda_log = model.store.get(layer.lambda_log).clone();
        let logscale = model.store.get_mut(layer.omega_logscale);
        for i in 0..logscale.nrows() {
            logscale.row_mut(i).fill(0.5 * lambda_log[(i, 0)]);
        }
    }
    Ok(())
}

fn kl_values(model: &Model) -> crate::Result<Vec<(&'static str, f64)>> {
    let mut out = Vec::new();
    if let Some(gp) = &model.gp {
        out.push(("inducing", gp.kl_inducing(&model.store)?));
    }
    for l in &model.layers {
        out.push(("weights", l.kl_weights(&model.store)));
        out.push(("spectra", l.kl_spectra(&model.store)));
    }
    Ok(out)
}

fn kl_check(cfg: &RunConfig) -> Outcome {
    let (base, _) = tiny(cfg).map_err(|e| e.to_string())?;
    let mut prior = base.clone();
    set_to_prior(&mut prior).map_err(|e| e.to_string())?;
    let at_prior = kl_values(&prior).map_err(|e| e.to_string())?;
    if let Some((name, v)) = at_prior.iter().find(|(_, v)| v.abs() > 1e-8) {
        return Err(format!("{name} KL is {v:e} at the prior"));
    }
    let mut min = f64::INFINITY;
    for trial in 0..5 {
        let mut m = base.clone();
        perturb(&mut m, cfg.seed.wrapping_add(trial + 1), 0.3);
        for (name, v) in kl_values(&m).map_err(|e| e.to_string())? {
            if !(v >= -1e-10) {
                return Err(format!("{name} KL is negative ({v:e}) at trial {trial}"));
            }
            min = min.min(v);
        }
    }
    Ok(format!("zero at the prior, minimum {min:.3e} over perturbed models"))
}
