//! Command-line interface. Each subcommand returns the text to print;
//! errors carry their exit code (see [`Error::exit_code`]).

use std::path::{Path, PathBuf};

use cdu_core::autoencoder::Autoencoder;
use cdu_core::rng::derive_seed;
use cdu_core::streams::Dataset;
use cdu_core::unlearner::fit_unlearner;
use clap::{Parser, Subcommand, ValueEnum};

use crate::artifact::Artifact;
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::harness::{run_scenario, run_suite};
use crate::report::{load_report, metrics_csv, render_table, write_report, Report};
use crate::{csvio, digits};

#[derive(Debug, Parser)]
#[command(
    name = "cdu",
    version,
    about = "Unsupervised unlearning of concept drift with autoencoders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and freeze an autoencoder on drift-free data.
    TrainAe {
        /// `digits` for the bundled digits (classes 0-4) or a CSV path.
        #[arg(long)]
        data: String,
        /// Scenario config; only its seed and [autoencoder] table are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an unlearning map for a stored autoencoder on post-drift samples.
    FitUnlearner {
        /// Directory written by `train-ae`.
        #[arg(long)]
        ae: PathBuf,
        /// CSV of unlabeled post-drift samples (a `label` column is ignored).
        #[arg(long)]
        data: PathBuf,
        /// Regularization strength C; overrides the config.
        #[arg(long)]
        c: Option<f64>,
        /// Scenario config; only its seed and [unlearner] table are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a fitted map to every row of a CSV file.
    Apply {
        /// Directory written by `fit-unlearner`.
        #[arg(long)]
        unlearner: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one scenario through the five-step protocol.
    RunScenario {
        #[arg(long)]
        config: PathBuf,
        /// Report directory; defaults to `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a suite of scenarios derived from one base config.
    RunSuite {
        #[arg(long)]
        config: PathBuf,
        #[arg(short = 'n', long = "num-scenarios")]
        num_scenarios: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a stored report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => ScenarioConfig::load(p),
        None => Ok(ScenarioConfig::digits()),
    }
}

fn out_dir(out: &Option<PathBuf>, cfg: &ScenarioConfig) -> Result<PathBuf> {
    out.clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))
}

fn load_samples(source: &str) -> Result<Dataset> {
    if source == "digits" {
        digits::load_digits()
    } else {
        csvio::load_csv_auto(Path::new(source))
    }
}

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::TrainAe {
            data,
            config,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let seed = seed.unwrap_or(cfg.seed);
            let samples = load_samples(data)?;
            let (ae, history) =
                Autoencoder::train(&samples.features, &cfg.autoencoder, derive_seed(seed, "autoencoder", 0))?;
            let mut artifact = Artifact::new(ae);
            artifact.metadata.insert("data".into(), data.clone());
            artifact.metadata.insert("seed".into(), seed.to_string());
            artifact.metadata.insert("samples".into(), samples.len().to_string());
            artifact.save(out)?;
            Ok(format!(
                "trained autoencoder {} -> {} on {} samples: loss {:.6} -> {:.6} in {} epochs\nwrote {}\n",
                artifact.autoencoder.input_dim(),
                artifact.autoencoder.latent_dim(),
                samples.len(),
                history.initial_loss,
                history.final_loss,
                history.epoch_losses.len(),
                out.display()
            ))
        }
        Command::FitUnlearner {
            ae,
            data,
            c,
            config,
            seed,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(c) = c {
                if !(c.is_finite() && *c >= 0.0) {
                    return Err(Error::Config(format!("--c must be finite and non-negative, got {c}")));
                }
                cfg.unlearner.regularization = *c;
            }
            let seed = seed.unwrap_or(cfg.seed);
            let mut artifact = Artifact::load(ae)?;
            let samples = csvio::load_csv_auto(data)?;
            if samples.dim() != artifact.autoencoder.input_dim() {
                return Err(Error::Data(format!(
                    "{}: {} features, autoencoder expects {}",
                    data.display(),
                    samples.dim(),
                    artifact.autoencoder.input_dim()
                )));
            }
            let fit = fit_unlearner(
                &artifact.autoencoder,
                &samples.features,
                &cfg.unlearner,
                derive_seed(seed, "unlearner", 0),
            )?;
            artifact.unlearner = Some(fit.map);
            artifact
                .metadata
                .insert("regularization".into(), cfg.unlearner.regularization.to_string());
            artifact
                .metadata
                .insert("unlearner_data".into(), data.display().to_string());
            artifact.metadata.insert("unlearner_seed".into(), seed.to_string());
            artifact.save(out)?;
            Ok(format!(
                "fitted unlearning map on {} samples (C = {}): objective {:.6} -> {:.6} in {} epochs\nwrote {}\n",
                samples.len(),
                cfg.unlearner.regularization,
                fit.initial_objective,
                fit.final_objective,
                fit.epochs_run,
                out.display()
            ))
        }
        Command::Apply { unlearner, input, out } => {
            let artifact = Artifact::load(unlearner)?;
            let map = artifact
                .unlearner
                .as_ref()
                .ok_or_else(|| Error::Data(format!("{}: artifact holds no unlearning map", unlearner.display())))?;
            let samples = csvio::load_csv_auto(input)?;
            if samples.dim() != map.dim() {
                return Err(Error::Data(format!(
                    "{}: {} features, map expects {}",
                    input.display(),
                    samples.dim(),
                    map.dim()
                )));
            }
            let mapped = Dataset::new(
                map.apply_matrix(&samples.features)?,
                samples.labels,
                samples.feature_names,
            )?;
            csvio::save_csv(out, &mapped)?;
            Ok(format!("mapped {} rows into {}\n", mapped.len(), out.display()))
        }
        Command::RunScenario { config, out } => {
            let cfg = ScenarioConfig::load(config)?;
            let dir = out_dir(out, &cfg)?;
            let scenario = run_scenario(&cfg)?;
            for w in &scenario.warnings {
                eprintln!("warning: {w}");
            }
            let report = Report::Scenario(scenario);
            write_report(&report, &dir)?;
            Ok(render_table(&report))
        }
        Command::RunSuite {
            config,
            num_scenarios,
            seed,
            out,
        } => {
            let cfg = ScenarioConfig::load(config)?;
            let dir = out_dir(out, &cfg)?;
            let suite = run_suite(&cfg, *num_scenarios, *seed)?;
            if let Some(w) = &suite.warning {
                eprintln!("warning: {w}");
            }
            let report = Report::Suite(suite);
            write_report(&report, &dir)?;
            Ok(render_table(&report))
        }
        Command::Report { input, format } => {
            let report = load_report(input)?;
            Ok(match format {
                Format::Csv => metrics_csv(&report),
                Format::Table => render_table(&report),
            })
        }
    }
}
