//! The five-step evaluation of a single drift scenario.
//!
//! 1. Train the downstream models and the autoencoder on a drift-free window.
//! 2. Evaluate the downstream models before the drift and on post-drift data.
//! 3. Collect a small unlabeled window once the detector fires and fit `f` on it.
//! 4. Evaluate the downstream models on `f(x)` for the post-drift window.
//! 5. Baseline: evaluate them on the autoencoder's reconstruction instead.
//!
//! Nothing is retrained after step 1; parameter hashes of the autoencoder and
//! the downstream models are recorded after every step so callers can verify
//! this.

use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{AeConfig, Autoencoder};
use crate::downstream::{LogisticConfig, LogisticModel, VirtualSensorModel};
use crate::driftmon::DriftDetector;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::ParamHash;
use crate::rng::derive_seed;
use crate::streams::Dataset;
use crate::unlearner::{fit_unlearner, UnlearnConfig, UnlearnMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    /// One classification task scored by accuracy; the stream must be labeled.
    Classification,
    /// One regression task per feature, each predicting that feature from the
    /// others, scored by R^2.
    VirtualSensors,
}

/// Stream windows. Collection starts wherever the detector first fires
/// after `pre_eval`; post-drift evaluation follows the collection window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Windows {
    pub train: Range<usize>,
    pub pre_eval: Range<usize>,
    pub collection_len: usize,
    /// `None` runs to the end of the stream.
    pub post_eval_len: Option<usize>,
}

impl Windows {
    pub fn validate(&self, stream_len: usize) -> Result<()> {
        if self.train.is_empty() || self.pre_eval.is_empty() {
            return Err(Error::invalid(
                "training and pre-drift evaluation windows must be non-empty",
            ));
        }
        if self.train.end > self.pre_eval.start || self.pre_eval.end > stream_len {
            return Err(Error::invalid(
                "windows must be ordered, disjoint and inside the stream",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub autoencoder: AeConfig,
    pub unlearner: UnlearnConfig,
    pub logistic: LogisticConfig,
}

/// One metric per evaluation condition. `None` marks an undefined metric
/// (e.g. R^2 of a target that no longer varies).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task_id: usize,
    pub before: Option<f64>,
    pub after_drift: Option<f64>,
    pub ae_baseline: Option<f64>,
    pub unlearned: Option<f64>,
}

impl TaskMetrics {
    pub fn is_degenerate(&self) -> bool {
        self.before.is_none() || self.after_drift.is_none() || self.ae_baseline.is_none() || self.unlearned.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepHashes {
    pub autoencoder: ParamHash,
    pub downstream: ParamHash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub samples: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOutcome {
    pub tasks: Vec<TaskMetrics>,
    /// First stream index at which the detector fired.
    pub detected_at: Option<usize>,
    pub collection: Range<usize>,
    pub post_eval: Range<usize>,
    /// Mean reconstruction loss on the pre-drift evaluation window.
    pub ae_loss_pre: f64,
    /// Same, on the post-drift evaluation window as observed.
    pub ae_loss_post: f64,
    /// Same, on the post-drift evaluation window after applying `f`.
    pub ae_loss_unlearned: f64,
    pub fit: Option<FitSummary>,
    /// Hashes after steps 1 through 5.
    pub hashes: Vec<StepHashes>,
    pub unlearn_map: UnlearnMap,
}

impl ProtocolOutcome {
    pub fn loss_ratio(&self) -> f64 {
        self.ae_loss_post / self.ae_loss_pre
    }

    /// Whether `f` lowered the reconstruction loss of the post-drift window.
    pub fn reconstruction_improved(&self) -> bool {
        self.ae_loss_unlearned < self.ae_loss_post
    }

    pub fn hashes_consistent(&self) -> bool {
        self.hashes.windows(2).all(|w| w[0] == w[1])
    }
}

#[derive(Debug, Clone)]
pub enum DownstreamModels {
    Classifier(LogisticModel),
    Sensors(Vec<VirtualSensorModel>),
}

impl DownstreamModels {
    pub fn train(task: TaskKind, train: &Dataset, config: &LogisticConfig) -> Result<Self> {
        match task {
            TaskKind::Classification => {
                let labels = train
                    .labels
                    .as_ref()
                    .ok_or_else(|| Error::invalid("classification needs a labeled stream"))?;
                Ok(DownstreamModels::Classifier(LogisticModel::train(
                    &train.features,
                    labels,
                    config,
                )?))
            }
            TaskKind::VirtualSensors => (0..train.dim())
                .map(|k| VirtualSensorModel::train(&train.features, k))
                .collect::<Result<Vec<_>>>()
                .map(DownstreamModels::Sensors),
        }
    }

    pub fn num_tasks(&self) -> usize {
        match self {
            DownstreamModels::Classifier(_) => 1,
            DownstreamModels::Sensors(s) => s.len(),
        }
    }

    /// Scores every task on `inputs`; targets and labels come from `truth`.
    pub fn evaluate(&self, inputs: &Matrix, truth: &Dataset) -> Result<Vec<Option<f64>>> {
        match self {
            DownstreamModels::Classifier(m) => {
                let labels = truth
                    .labels
                    .as_ref()
                    .ok_or_else(|| Error::invalid("classification needs labels"))?;
                Ok(alloc::vec![Some(m.accuracy(inputs, labels)?)])
            }
            DownstreamModels::Sensors(models) => models
                .iter()
                .map(|m| match m.score(inputs, &truth.features) {
                    Ok(v) => Ok(Some(v)),
                    Err(Error::UndefinedMetric(_)) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect(),
        }
    }

    pub fn fingerprint(&self) -> ParamHash {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        match self {
            DownstreamModels::Classifier(m) => h.update(m.fingerprint().0),
            DownstreamModels::Sensors(s) => s.iter().for_each(|m| h.update(m.fingerprint().0)),
        }
        let mut out = [0u8; 32];
        out.copy_from_slice(&h.finalize());
        ParamHash(out)
    }
}

pub fn run_protocol(
    stream: &Dataset,
    windows: &Windows,
    task: TaskKind,
    detector: &mut dyn DriftDetector,
    config: &ProtocolConfig,
    seed: u64,
) -> Result<ProtocolOutcome> {
    windows.validate(stream.len())?;
    let n = stream.len();

    // Step 1.
    let train = stream.slice(windows.train.clone());
    let (ae, _) = Autoencoder::train(
        &train.features,
        &config.autoencoder,
        derive_seed(seed, "autoencoder", 0),
    )?;
    let models = DownstreamModels::train(task, &train, &config.logistic)?;
    let mut hashes = Vec::with_capacity(5);
    let snapshot = |ae: &Autoencoder, m: &DownstreamModels| StepHashes {
        autoencoder: ae.fingerprint(),
        downstream: m.fingerprint(),
    };
    hashes.push(snapshot(&ae, &models));

    // Step 2.
    let pre = stream.slice(windows.pre_eval.clone());
    let before = models.evaluate(&pre.features, &pre)?;
    let mut detected_at = None;
    for t in windows.pre_eval.end..n {
        if detector.observe(t, stream.features.row(t))? {
            detected_at = Some(t);
            break;
        }
    }
    let (collection, post_start) = match detected_at {
        Some(t) => {
            let end = t + windows.collection_len;
            if end >= n {
                return Err(Error::invalid("collection window runs past the end of the stream"));
            }
            (t..end, end)
        }
        None => (windows.pre_eval.end..windows.pre_eval.end, windows.pre_eval.end),
    };
    let post_end = windows.post_eval_len.map_or(n, |l| (post_start + l).min(n));
    if post_start >= post_end {
        return Err(Error::invalid("post-drift evaluation window is empty"));
    }
    let post = stream.slice(post_start..post_end);
    let after_drift = models.evaluate(&post.features, &post)?;
    hashes.push(snapshot(&ae, &models));

    // Step 3.
    let (map, fit) = if collection.is_empty() {
        (UnlearnMap::identity(stream.dim())?, None)
    } else {
        let d_star = stream.features.slice_rows(collection.clone());
        let report = fit_unlearner(&ae, &d_star, &config.unlearner, derive_seed(seed, "unlearner", 0))?;
        let summary = FitSummary {
            samples: d_star.rows(),
            initial_objective: report.initial_objective,
            final_objective: report.final_objective,
            epochs: report.epochs_run,
        };
        (report.map, Some(summary))
    };
    hashes.push(snapshot(&ae, &models));

    // Step 4.
    let corrected = map.apply_matrix(&post.features)?;
    let unlearned = models.evaluate(&corrected, &post)?;
    hashes.push(snapshot(&ae, &models));

    // Step 5.
    let reconstructed = ae.reconstruct_matrix(&post.features)?;
    let ae_baseline = models.evaluate(&reconstructed, &post)?;
    hashes.push(snapshot(&ae, &models));

    let tasks = (0..models.num_tasks())
        .map(|i| TaskMetrics {
            task_id: i,
            before: before[i],
            after_drift: after_drift[i],
            ae_baseline: ae_baseline[i],
            unlearned: unlearned[i],
        })
        .collect();

    Ok(ProtocolOutcome {
        tasks,
        detected_at,
        collection,
        post_eval: post_start..post_end,
        ae_loss_pre: ae.reconstruction_loss(&pre.features)?,
        ae_loss_post: ae.reconstruction_loss(&post.features)?,
        ae_loss_unlearned: ae.reconstruction_loss(&corrected)?,
        fit,
        hashes,
        unlearn_map: map,
    })
}
