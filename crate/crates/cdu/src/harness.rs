//! Scenario construction, the evaluation protocol per scenario, and suite
//! aggregation.

use std::ops::Range;
use std::time::Instant;

use cdu_core::driftmon::GroundTruthDetector;
use cdu_core::linalg::{mean, median, variance};
use cdu_core::protocol::{run_protocol, FitSummary, StepHashes, TaskKind, TaskMetrics, Windows};
use cdu_core::rng::{derive_rng, derive_seed};
use cdu_core::streams::{
    digits_drift_matrix, inject_fault, kfold_split, sample_fault_spec, synth_network_stream, Dataset, FaultSpec,
};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, DriftSpec, ScenarioConfig};
use crate::csvio;
use crate::digits;
use crate::error::{Error, Result};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Below this post/pre reconstruction-loss ratio the drift is barely visible
/// to the autoencoder and unlearning is unlikely to help.
pub const LOW_LOSS_RATIO: f64 = 2.0;

/// A fully assembled stream with its windows and true drift onset.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub stream: Dataset,
    pub windows: Windows,
    pub task: TaskKind,
    /// First drifted index; equals the stream length when nothing drifts.
    pub onset: usize,
    pub fault: Option<FaultSpec>,
    /// The configuration with any random fault resolved to a concrete one.
    pub resolved: ScenarioConfig,
}

fn cfg_err(e: cdu_core::Error) -> Error {
    Error::Config(e.to_string())
}

pub fn build_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    match &cfg.data {
        DataSource::Digits { folds, fold } => {
            let data = digits::load_digits()?;
            build_digits(cfg, &data, *folds, *fold)
        }
        DataSource::Synth { network } => {
            let stream = synth_network_stream(network, derive_seed(cfg.seed, "stream", 0))?;
            build_stream(cfg, stream)
        }
        DataSource::Csv { path, has_labels } => build_stream(cfg, csvio::load_csv(path, *has_labels)?),
    }
}

/// Fold `fold` of a k-fold split over the digits. The training part is
/// shuffled and its last `collection` images are held out as D*. Stream
/// layout: clean train | clean test | drifted D* | drifted test.
pub fn build_digits(cfg: &ScenarioConfig, data: &Dataset, folds: usize, fold: usize) -> Result<Scenario> {
    let splits = kfold_split(data.len(), folds, derive_seed(cfg.seed, "folds", 0)).map_err(cfg_err)?;
    let split = &splits[fold];
    let mut train_idx = split.train.clone();
    train_idx.shuffle(&mut derive_rng(
        derive_seed(cfg.seed, "holdout", fold as u64),
        "shuffle",
    ));
    let collection = cfg.windows.collection;
    if collection + 2 > train_idx.len() {
        return Err(Error::Config(format!(
            "windows.collection = {collection} leaves no training data in a fold of {}",
            train_idx.len()
        )));
    }
    let (train_idx, held_idx) = train_idx.split_at(train_idx.len() - collection);
    let train = data.select(train_idx);
    let test = data.select(&split.test);
    let held = data.select(held_idx);

    let drift = cfg.drift();
    let blank = |d: &Dataset| -> Result<Dataset> {
        Ok(match drift {
            DriftSpec::Digits => Dataset::new(digits_drift_matrix(&d.features)?, d.labels.clone(), None)?,
            _ => d.clone(),
        })
    };
    let stream = train.concat(&test)?.concat(&blank(&held)?)?.concat(&blank(&test)?)?;
    let (ntr, nte) = (train.len(), test.len());
    let onset = match drift {
        DriftSpec::None => stream.len(),
        _ => ntr + nte,
    };
    Ok(Scenario {
        windows: Windows {
            train: 0..ntr,
            pre_eval: ntr..ntr + nte,
            collection_len: collection,
            post_eval_len: Some(nte),
        },
        task: TaskKind::Classification,
        onset,
        fault: None,
        resolved: ScenarioConfig {
            drift: Some(drift),
            ..cfg.clone()
        },
        stream,
    })
}

/// Time-ordered stream source (synthetic network or CSV): train on the first
/// `train_fraction` of the pre-drift part, evaluate clean on the rest.
pub fn build_stream(cfg: &ScenarioConfig, stream: Dataset) -> Result<Scenario> {
    let n = stream.len();
    let w = &cfg.windows;
    let onset = w.onset.unwrap_or(n / 2);
    let train_end = (w.train_fraction * onset as f64).floor() as usize;
    if train_end == 0 || train_end >= onset || onset + w.collection >= n {
        return Err(Error::Config(format!(
            "windows do not fit a stream of {n} samples (onset {onset}, collection {})",
            w.collection
        )));
    }
    let windows = Windows {
        train: 0..train_end,
        pre_eval: train_end..onset,
        collection_len: w.collection,
        post_eval_len: w.post_eval,
    };
    let task = if stream.labels.is_some() {
        TaskKind::Classification
    } else {
        TaskKind::VirtualSensors
    };

    let fault = match cfg.drift() {
        DriftSpec::None | DriftSpec::Digits => None,
        DriftSpec::Fault {
            fault,
            target,
            parameter,
            seed,
        } => Some(FaultSpec {
            kind: fault,
            target,
            parameter,
            onset,
            seed,
        }),
        DriftSpec::RandomFault => {
            let stds = stream.features.slice_rows(windows.train.clone()).column_stds();
            Some(sample_fault_spec(&mut derive_rng(cfg.seed, "fault"), &stds, onset)?)
        }
    };
    let (stream, drift, onset) = match &fault {
        Some(spec) => {
            spec.validate(n, stream.dim()).map_err(cfg_err)?;
            let features = inject_fault(&stream.features, spec)?;
            let drift = DriftSpec::Fault {
                fault: spec.kind,
                target: spec.target,
                parameter: spec.parameter,
                seed: spec.seed,
            };
            (
                Dataset::new(features, stream.labels, stream.feature_names)?,
                drift,
                onset,
            )
        }
        None => (stream, DriftSpec::None, n),
    };
    Ok(Scenario {
        stream,
        windows,
        task,
        onset,
        fault,
        resolved: ScenarioConfig {
            drift: Some(drift),
            ..cfg.clone()
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub format_version: u32,
    /// Resolved configuration; re-running it reproduces this report.
    pub config: ScenarioConfig,
    pub seed: u64,
    pub task: TaskKind,
    pub tasks: Vec<TaskMetrics>,
    /// Tasks with an undefined metric (e.g. a dead sensor as target).
    pub degenerate_tasks: Vec<usize>,
    pub fault: Option<FaultSpec>,
    pub onset: usize,
    pub detected_at: Option<usize>,
    pub collection: Range<usize>,
    pub post_eval: Range<usize>,
    pub ae_loss_pre: f64,
    pub ae_loss_post: f64,
    pub ae_loss_unlearned: f64,
    /// Post-drift over pre-drift reconstruction loss.
    pub ae_loss_ratio: f64,
    /// The L1 weight C used to fit the map.
    pub regularization: f64,
    pub fit: Option<FitSummary>,
    pub hashes: Vec<StepHashes>,
    pub runtime_seconds: f64,
    pub warnings: Vec<String>,
}

impl ScenarioReport {
    /// The suite filter: the map must lower the reconstruction loss of the
    /// drifted evaluation window.
    pub fn reconstruction_improved(&self) -> bool {
        self.ae_loss_unlearned < self.ae_loss_post
    }

    pub fn hashes_consistent(&self) -> bool {
        self.hashes.len() == 5 && self.hashes.windows(2).all(|w| w[0] == w[1])
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    let start = Instant::now();
    let scenario = build_scenario(cfg)?;
    run_built(&scenario, start)
}

pub fn run_built(scenario: &Scenario, start: Instant) -> Result<ScenarioReport> {
    let cfg = &scenario.resolved;
    let protocol_seed = match cfg.data {
        DataSource::Digits { fold, .. } => derive_seed(cfg.seed, "protocol", fold as u64),
        _ => derive_seed(cfg.seed, "protocol", 0),
    };
    let mut detector = GroundTruthDetector::new(scenario.onset);
    let out = run_protocol(
        &scenario.stream,
        &scenario.windows,
        scenario.task,
        &mut detector,
        &cfg.protocol(),
        protocol_seed,
    )?;
    let mut warnings = Vec::new();
    if out.detected_at.is_some() && !(out.loss_ratio() >= LOW_LOSS_RATIO) {
        warnings.push(format!(
            "reconstruction loss ratio {:.3} is below {LOW_LOSS_RATIO}: the autoencoder barely sees this drift",
            out.loss_ratio()
        ));
    }
    let degenerate_tasks = out
        .tasks
        .iter()
        .filter(|t| t.is_degenerate())
        .map(|t| t.task_id)
        .collect();
    Ok(ScenarioReport {
        format_version: REPORT_FORMAT_VERSION,
        config: cfg.clone(),
        seed: cfg.seed,
        task: scenario.task,
        degenerate_tasks,
        fault: scenario.fault,
        onset: scenario.onset,
        detected_at: out.detected_at,
        collection: out.collection.clone(),
        post_eval: out.post_eval.clone(),
        ae_loss_pre: out.ae_loss_pre,
        ae_loss_post: out.ae_loss_post,
        ae_loss_unlearned: out.ae_loss_unlearned,
        ae_loss_ratio: out.loss_ratio(),
        regularization: cfg.unlearner.regularization,
        fit: out.fit,
        hashes: out.hashes,
        runtime_seconds: start.elapsed().as_secs_f64(),
        warnings,
        tasks: out.tasks,
    })
}

/// One value per evaluation condition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Conditions {
    pub before: Option<f64>,
    pub after_drift: Option<f64>,
    pub ae_baseline: Option<f64>,
    pub unlearned: Option<f64>,
}

impl Conditions {
    pub const NAMES: [&'static str; 4] = ["before", "after_drift", "ae_baseline", "unlearned"];

    pub fn of(t: &TaskMetrics) -> Self {
        Conditions {
            before: t.before,
            after_drift: t.after_drift,
            ae_baseline: t.ae_baseline,
            unlearned: t.unlearned,
        }
    }

    pub fn values(&self) -> [Option<f64>; 4] {
        [self.before, self.after_drift, self.ae_baseline, self.unlearned]
    }

    fn from_fn(mut f: impl FnMut(usize) -> Option<f64>) -> Self {
        Conditions {
            before: f(0),
            after_drift: f(1),
            ae_baseline: f(2),
            unlearned: f(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: usize,
    /// Kept scenarios in which this task was not degenerate.
    pub scenarios: usize,
    pub median: Conditions,
    pub mean: Conditions,
    pub variance: Conditions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub format_version: u32,
    pub base: ScenarioConfig,
    pub seed: u64,
    pub filter: bool,
    pub scenarios: Vec<ScenarioReport>,
    /// Per scenario, whether it survived the filter.
    pub kept: Vec<bool>,
    pub filtered: usize,
    pub summary: Vec<TaskSummary>,
    pub warning: Option<String>,
}

impl SuiteReport {
    /// Aggregates finished scenarios; a pure function of its inputs, so a
    /// stored suite can be re-filtered offline.
    pub fn aggregate(base: ScenarioConfig, seed: u64, scenarios: Vec<ScenarioReport>, filter: bool) -> Self {
        let kept: Vec<bool> = scenarios
            .iter()
            .map(|s| !filter || s.reconstruction_improved())
            .collect();
        let filtered = kept.iter().filter(|k| !**k).count();
        let num_tasks = scenarios.iter().map(|s| s.tasks.len()).max().unwrap_or(0);
        let summary = (0..num_tasks)
            .map(|task_id| {
                let rows: Vec<Conditions> = scenarios
                    .iter()
                    .zip(&kept)
                    .filter(|(_, k)| **k)
                    .filter_map(|(s, _)| s.tasks.iter().find(|t| t.task_id == task_id))
                    .filter(|t| !t.is_degenerate())
                    .map(Conditions::of)
                    .collect();
                let column = |i: usize| -> Vec<f64> { rows.iter().filter_map(|c| c.values()[i]).collect() };
                TaskSummary {
                    task_id,
                    scenarios: rows.len(),
                    median: Conditions::from_fn(|i| median(&column(i))),
                    mean: Conditions::from_fn(|i| {
                        let c = column(i);
                        (!c.is_empty()).then(|| mean(&c))
                    }),
                    variance: Conditions::from_fn(|i| variance(&column(i))),
                }
            })
            .collect();
        let warning = (kept.iter().all(|k| !k)).then(|| "no scenario survived the filter".to_string());
        SuiteReport {
            format_version: REPORT_FORMAT_VERSION,
            base,
            seed,
            filter,
            scenarios,
            kept,
            filtered,
            summary,
            warning,
        }
    }

    pub fn kept_count(&self) -> usize {
        self.scenarios.len() - self.filtered
    }
}

/// Per-scenario configurations of a suite. Digits suites walk the folds
/// (sharing one split); stream suites draw a fresh seed, and hence a fresh
/// stream and fault, per scenario.
pub fn suite_configs(base: &ScenarioConfig, num_scenarios: usize, seed: u64) -> Result<Vec<ScenarioConfig>> {
    if num_scenarios == 0 {
        return Err(Error::Config("a suite needs at least one scenario".into()));
    }
    base.validate()?;
    match &base.data {
        DataSource::Digits { folds, .. } => {
            if num_scenarios > *folds {
                return Err(Error::Config(format!(
                    "a digits suite has at most {folds} scenarios (one per fold)"
                )));
            }
            Ok((0..num_scenarios)
                .map(|fold| ScenarioConfig {
                    seed,
                    data: DataSource::Digits { folds: *folds, fold },
                    ..base.clone()
                })
                .collect())
        }
        _ => Ok((0..num_scenarios)
            .map(|i| ScenarioConfig {
                seed: derive_seed(seed, "scenario", i as u64),
                ..base.clone()
            })
            .collect()),
    }
}

pub fn run_suite(base: &ScenarioConfig, num_scenarios: usize, seed: u64) -> Result<SuiteReport> {
    let configs = suite_configs(base, num_scenarios, seed)?;
    // Digits folds share the dataset; load it once.
    let digits = match base.data {
        DataSource::Digits { .. } => Some(digits::load_digits()?),
        _ => None,
    };
    let reports = configs
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| {
            let start = Instant::now();
            let scenario = match (&digits, &cfg.data) {
                (Some(data), DataSource::Digits { folds, fold }) => build_digits(cfg, data, *folds, *fold),
                _ => build_scenario(cfg),
            };
            scenario
                .and_then(|s| run_built(&s, start))
                .map_err(|e| e.context(format!("scenario {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport::aggregate(
        base.clone(),
        seed,
        reports,
        base.filter_enabled(),
    ))
}
