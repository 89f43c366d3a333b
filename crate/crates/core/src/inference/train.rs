use std::fmt::Write as _;
use std::path::Path;

use crate::data::{batch_iter, Dataset};
use crate::diffcore::{l2_penalty, AdamConfig, AdamState, Tape};
use crate::error::{Error, Result};
use crate::likelihood::target_matrix;
use crate::model::{Model, ModelConfig, ModelKind};

use super::elbo::elbo_on_tape;
use super::noise::NoiseBank;
use super::TrainConfig;

/// Mean ELBO estimate of each epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<(usize, f64)>,
}

impl Trace {
    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.1).collect()
    }

    /// Two whitespace-separated columns: epoch, ELBO.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (epoch, v) in &self.rows {
            writeln!(out, "{epoch} {v:?}").expect("writing to a String");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Maximize the ELBO (minus an L2 penalty on the trained parameters) with Adam.
pub fn train(model: &mut Model, data: &Dataset, config: &TrainConfig) -> Result<Trace> {
    train_with_progress(model, data, config, |_, _| {})
}

/// [`train`], calling `progress(epoch, mean_elbo)` after every epoch.
pub fn train_with_progress(
    model: &mut Model,
    data: &Dataset,
    config: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<Trace> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if config.gp_warmup_epochs > 0 && model.config.kind == ModelKind::GpDrf {
        warm_up_gp(model, data, config)?;
    }
    let feats = model.features(&data.inputs)?;
    let targets = target_matrix(&data.targets, &model.config.likelihood)?;
    let bank = NoiseBank::new(model, config.samples, config.seed, config.fix_latent_noise);
    let active = model.active_params();
    let names: Vec<String> = active.iter().map(|id| model.store.name(*id).to_string()).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let adam_config = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_config, active.iter().map(|id| model.store.get(*id)));

    let mut trace = Trace::default();
    let mut global_step = 0usize;
    for epoch in 0..config.epochs {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (step, batch) in batch_iter(data, config.batch_size, config.seed, epoch).enumerate() {
            let divergence = |message: String| Error::Divergence { step: global_step, message };
            let batch_feats = feats.select(&batch);
            let batch_targets = targets.select_rows(&batch);
            let noise = bank.draw(epoch, step, &batch);

            let tape = Tape::new();
            let b = model.store.bind(&tape);
            let elbo = elbo_on_tape(model, &b, &tape, &batch_feats, &batch_targets, data.len(), &noise)
                .map_err(|e| match e {
                    Error::NotPositiveDefinite { .. } | Error::Numerical(_) => {
                        divergence(format!("epoch {epoch}: {e}"))
                    }
                    other => other,
                })?;
            let value = elbo.total.scalar();
            if !value.is_finite() {
                return Err(divergence(format!("epoch {epoch}: ELBO is {value}")));
            }
            let vars: Vec<_> = active.iter().map(|id| b.get(*id)).collect();
            let objective = if config.l2 > 0.0 {
                l2_penalty(&vars, config.l2)? - elbo.total
            } else {
                -elbo.total
            };
            let grads = tape.grad(objective, &vars)?;
            drop(b);

            let mut values: Vec<_> = active.iter().map(|id| model.store.get(*id).clone()).collect();
            adam.step(&mut values, &grads, &name_refs).map_err(|e| match e {
                Error::NonFiniteGradient(name) => divergence(format!("epoch {epoch}: gradient of {name} is not finite")),
                other => other,
            })?;
            for (id, v) in active.iter().zip(values) {
                *model.store.get_mut(*id) = v;
            }
            sum += value;
            count += 1;
            global_step += 1;
        }
        let mean = sum / count as f64;
        trace.rows.push((epoch, mean));
        progress(epoch, mean);
    }
    Ok(trace)
}

/// Fit a plain GP on the same pseudo-inputs and copy its layer (and noise)
/// parameters into `model`.
pub(super) fn warm_up_gp(model: &mut Model, data: &Dataset, config: &TrainConfig) -> Result<()> {
    let gp = model.gp.as_ref().expect("gp-drf models carry a GP layer");
    let width = gp.latent_dim();
    let gp_config = ModelConfig {
        kind: ModelKind::Gp,
        widths: vec![width],
        features: vec![],
        ..model.config.clone()
    };
    let mut plain = Model::new(gp_config, Some(gp.pseudo_inputs.clone()), config.seed).map_err(|e| {
        Error::Config(format!("gp_warmup_epochs: GP width {width} must equal the likelihood's dimension ({e})"))
    })?;
    let warm = TrainConfig {
        epochs: config.gp_warmup_epochs,
        gp_warmup_epochs: 0,
        ..config.clone()
    };
    train(&mut plain, data, &warm)?;
    for (name, value) in plain.store.iter() {
        if let Some(id) = model.store.id_of(name) {
            *model.store.get_mut(id) = value.clone();
        }
    }
    Ok(())
}
