//! Drift detectors.
//!
//! Experiments use [`GroundTruthDetector`], which knows the true onset. The
//! [`MonitorState`] detector is a simple EWMA-over-threshold monitor on the
//! autoencoder's reconstruction loss for streaming use.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autoencoder::Autoencoder;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Observations during which the monitor never fires.
pub const WARM_UP: u64 = 10;
/// Multiplier applied to the calibrated quantile.
pub const SAFETY_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftVerdict {
    pub drifted: bool,
    /// Current smoothed reconstruction loss.
    pub statistic: f64,
    pub threshold: f64,
    pub sample_index: u64,
}

/// The detector interface of the unlearning loop: given the stream position
/// and the current sample, has drift happened?
pub trait DriftDetector {
    fn observe(&mut self, t: usize, x: &[f64]) -> Result<bool>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroundTruthDetector {
    onset: usize,
}

impl GroundTruthDetector {
    pub fn new(onset: usize) -> Self {
        GroundTruthDetector { onset }
    }

    pub fn onset(&self) -> usize {
        self.onset
    }

    pub fn is_drifted(&self, t: usize) -> bool {
        t >= self.onset
    }
}

impl DriftDetector for GroundTruthDetector {
    fn observe(&mut self, t: usize, _x: &[f64]) -> Result<bool> {
        Ok(self.is_drifted(t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorConfig {
    pub quantile: f64,
    pub alpha: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            quantile: 0.99,
            alpha: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorState {
    ewma: Option<f64>,
    alpha: f64,
    threshold: f64,
    seen: u64,
}

impl MonitorState {
    /// Threshold = `SAFETY_FACTOR` times the empirical `quantile` of the
    /// smoothed losses over a drift-free holdout.
    pub fn calibrate(ae: &Autoencoder, holdout: &Matrix, quantile: f64, alpha: f64) -> Result<Self> {
        if holdout.is_empty() {
            return Err(Error::Empty);
        }
        if !(quantile > 0.0 && quantile <= 1.0) {
            return Err(Error::invalid("quantile must lie in (0, 1]"));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid("smoothing factor must lie in (0, 1]"));
        }
        let mut ewma: Option<f64> = None;
        let mut smoothed = Vec::with_capacity(holdout.rows());
        for x in holdout.iter_rows() {
            let l = ae.sample_loss(x)?;
            let s = match ewma {
                None => l,
                Some(prev) => alpha * l + (1.0 - alpha) * prev,
            };
            ewma = Some(s);
            smoothed.push(s);
        }
        let q = empirical_quantile(&mut smoothed, quantile);
        Ok(MonitorState {
            ewma: None,
            alpha,
            threshold: SAFETY_FACTOR * q,
            seen: 0,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn statistic(&self) -> Option<f64> {
        self.ewma
    }

    /// Pure update: returns the next state and its verdict.
    pub fn observe(&self, ae: &Autoencoder, x: &[f64]) -> Result<(MonitorState, DriftVerdict)> {
        let loss = ae.sample_loss(x)?;
        let ewma = match self.ewma {
            None => loss,
            Some(prev) => self.alpha * loss + (1.0 - self.alpha) * prev,
        };
        let next = MonitorState {
            ewma: Some(ewma),
            seen: self.seen + 1,
            ..*self
        };
        let verdict = DriftVerdict {
            drifted: next.seen > WARM_UP && ewma > self.threshold,
            statistic: ewma,
            threshold: self.threshold,
            sample_index: self.seen,
        };
        Ok((next, verdict))
    }
}

/// Nearest-rank quantile; `q = 1` is the maximum.
fn empirical_quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let rank = libm::ceil(q * n as f64) as usize;
    values[rank.clamp(1, n) - 1]
}

/// Adapts a [`MonitorState`] to the [`DriftDetector`] interface.
pub struct ReconstructionMonitor<'a> {
    ae: &'a Autoencoder,
    state: MonitorState,
    last: Option<DriftVerdict>,
}

impl<'a> ReconstructionMonitor<'a> {
    pub fn new(ae: &'a Autoencoder, state: MonitorState) -> Self {
        ReconstructionMonitor { ae, state, last: None }
    }

    pub fn last_verdict(&self) -> Option<DriftVerdict> {
        self.last
    }
}

impl DriftDetector for ReconstructionMonitor<'_> {
    fn observe(&mut self, _t: usize, x: &[f64]) -> Result<bool> {
        let (next, verdict) = self.state.observe(self.ae, x)?;
        self.state = next;
        self.last = Some(verdict);
        Ok(verdict.drifted)
    }
}
