use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gpdrf::cli::{cmd_evaluate, cmd_train, cmd_uncertainty, run_checks, PredictOptions, RunConfig};
use gpdrf::model::ModelKind;

#[derive(Parser)]
#[command(name = "gpdrf", version, about = "GP input layer feeding deep random-feature layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write its trace and checkpoint.
    Train(Common),
    /// Error rate or RMSE of a checkpoint on a test set.
    Evaluate(Common),
    /// Per-point certainty margins on a classification test set.
    Uncertainty(Common),
    /// Fast self-test battery.
    Check(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo samples S.
    #[arg(long)]
    samples: Option<usize>,
    /// Predictive draws T per sample.
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    model: Option<ModelKind>,
}

impl Common {
    fn run_config(&self) -> gpdrf::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.train_data = Some(d.clone());
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.samples {
            cfg.samples = s;
        }
        if let Some(t) = self.draws {
            cfg.draws = t;
        }
        if let Some(m) = self.model {
            cfg.model = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn predict_options(&self) -> PredictOptions {
        PredictOptions { samples: self.samples, draws: self.draws, seed: self.seed }
    }

    /// Checkpoint and test set for evaluate/uncertainty. A config supplies
    /// defaults for both when the flags are absent.
    fn predict_inputs(&self) -> gpdrf::Result<(PathBuf, PathBuf, PathBuf)> {
        let cfg = match &self.config {
            Some(p) => Some(RunConfig::load(p)?),
            None => None,
        };
        let out = self.out.clone().or_else(|| cfg.as_ref().map(|c| c.out_dir.clone())).unwrap_or_else(|| "out".into());
        let ckpt = self.checkpoint.clone().unwrap_or_else(|| out.join(gpdrf::cli::CHECKPOINT_FILE));
        let data = self
            .data
            .clone()
            .or_else(|| cfg.and_then(|c| c.test_data))
            .ok_or_else(|| gpdrf::Error::Config("no test set given (use --data or test_data)".into()))?;
        Ok((ckpt, data, out))
    }
}

fn run(cli: Cli) -> gpdrf::Result<bool> {
    match cli.command {
        Command::Train(c) => {
            let cfg = c.run_config()?;
            let outcome = cmd_train(&cfg, c.checkpoint.as_deref(), |epoch, elbo| {
                eprintln!("epoch {epoch} elbo {elbo:.6}");
            })?;
            println!("trace\t{}", outcome.trace_path.display());
            println!("checkpoint\t{}", outcome.checkpoint_path.display());
            if let Some(last) = outcome.trace.values().last() {
                println!("final_elbo\t{last:?}");
            }
        }
        Command::Evaluate(c) => {
            let (ckpt, data, out) = c.predict_inputs()?;
            let (metric, path) = cmd_evaluate(&ckpt, &data, c.predict_options(), &out)?;
            println!("{}\t{:?}", metric.name(), metric.value());
            println!("metrics\t{}", path.display());
        }
        Command::Uncertainty(c) => {
            let (ckpt, data, out) = c.predict_inputs()?;
            let (report, path) = cmd_uncertainty(&ckpt, &data, c.predict_options(), &out)?;
            println!("error_rate\t{:?}", report.error_rate);
            println!("report\t{}", path.display());
        }
        Command::Check(c) => {
            let cfg = c.run_config()?;
            let report = run_checks(&cfg, c.checkpoint.as_deref());
            print!("{}", report.to_text());
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
