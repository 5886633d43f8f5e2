//! Data supply: datasets, drift and sensor-fault injection, a synthetic
//! correlated sensor network, and k-fold splitting.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;
use crate::rng::derive_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Option<Vec<i64>>,
    pub feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Option<Vec<i64>>, feature_names: Option<Vec<String>>) -> Result<Self> {
        if let Some(l) = &labels {
            check_len("labels", features.rows(), l.len())?;
        }
        if let Some(n) = &feature_names {
            check_len("feature names", features.cols(), n.len())?;
        }
        features.check_finite()?;
        Ok(Dataset {
            features,
            labels,
            feature_names,
        })
    }

    pub fn unlabeled(features: Matrix) -> Result<Self> {
        Dataset::new(features, None, None)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn slice(&self, range: Range<usize>) -> Dataset {
        Dataset {
            features: self.features.slice_rows(range.clone()),
            labels: self.labels.as_ref().map(|l| l[range].to_vec()),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Keeps only samples whose label is in `classes`.
    pub fn filter_classes(&self, classes: &[i64]) -> Result<Dataset> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("dataset has no labels"))?;
        let idx: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&labels[i])).collect();
        Ok(self.select(&idx))
    }

    /// Appends `other`; labels are kept only if both sides carry them.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        let features = self.features.vstack(&other.features)?;
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(Dataset {
            features,
            labels,
            feature_names: self.feature_names.clone().or_else(|| other.feature_names.clone()),
        })
    }
}

/// Side length of the digit images.
pub const DIGIT_SIDE: usize = 8;

/// Zeroes the upper half (rows 0..4) of a row-major 8x8 image.
pub fn digits_drift(x: &[f64]) -> Result<Vec<f64>> {
    check_len("digit image", DIGIT_SIDE * DIGIT_SIDE, x.len())?;
    let mut out = x.to_vec();
    out[..DIGIT_SIDE * DIGIT_SIDE / 2].iter_mut().for_each(|v| *v = 0.0);
    Ok(out)
}

pub fn digits_drift_matrix(x: &Matrix) -> Result<Matrix> {
    x.map_rows(x.cols(), digits_drift)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultKind {
    /// `v + c`.
    ConstantOffset,
    /// `v + e`, `e ~ N(0, sigma^2)`.
    GaussianNoise,
    /// Reading forced to zero.
    PowerFailure,
    /// `g * v`.
    ProportionalOffset,
}

impl FaultKind {
    pub const ALL: [FaultKind; 4] = [
        FaultKind::ConstantOffset,
        FaultKind::GaussianNoise,
        FaultKind::PowerFailure,
        FaultKind::ProportionalOffset,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub target: usize,
    /// Offset, noise standard deviation, or gain; unused for power failures.
    pub parameter: f64,
    pub onset: usize,
    pub seed: u64,
}

impl FaultSpec {
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if self.target >= cols {
            return Err(Error::invalid("fault target feature out of range"));
        }
        if self.onset >= rows {
            return Err(Error::invalid("fault onset beyond the stream"));
        }
        if !self.parameter.is_finite() {
            return Err(Error::invalid("fault parameter must be finite"));
        }
        match self.kind {
            FaultKind::GaussianNoise if self.parameter <= 0.0 => {
                Err(Error::invalid("noise standard deviation must be positive"))
            }
            FaultKind::ProportionalOffset if self.parameter == 1.0 => Err(Error::invalid("a gain of 1 is not a fault")),
            _ => Ok(()),
        }
    }
}

/// Applies `spec` to column `spec.target` of every row from `spec.onset` on.
/// All other entries are copied bit for bit.
pub fn inject_fault(x: &Matrix, spec: &FaultSpec) -> Result<Matrix> {
    spec.validate(x.rows(), x.cols())?;
    let mut out = x.clone();
    let k = spec.target;
    let mut rng = derive_rng(spec.seed, "fault-noise");
    let noise = match spec.kind {
        FaultKind::GaussianNoise => {
            Some(Normal::new(0.0, spec.parameter).map_err(|_| Error::invalid("bad noise sigma"))?)
        }
        _ => None,
    };
    for r in spec.onset..x.rows() {
        let v = x.get(r, k);
        let faulty = match spec.kind {
            FaultKind::ConstantOffset => v + spec.parameter,
            FaultKind::GaussianNoise => v + noise.unwrap().sample(&mut rng),
            FaultKind::PowerFailure => 0.0,
            FaultKind::ProportionalOffset => spec.parameter * v,
        };
        out.set(r, k, faulty);
    }
    Ok(out)
}

/// Draws a random fault: kind and target uniform, severities scaled by the
/// target feature's standard deviation.
pub fn sample_fault_spec<R: Rng + ?Sized>(rng: &mut R, feature_std: &[f64], onset: usize) -> Result<FaultSpec> {
    if feature_std.is_empty() {
        return Err(Error::invalid("need at least one feature"));
    }
    let kind = FaultKind::ALL[rng.random_range(0..4)];
    let target = rng.random_range(0..feature_std.len());
    let sd = if feature_std[target] > 0.0 {
        feature_std[target]
    } else {
        1.0
    };
    let parameter = match kind {
        FaultKind::ConstantOffset => rng.random_range(0.5..3.0) * sd,
        FaultKind::GaussianNoise => rng.random_range(0.25..1.0) * sd,
        FaultKind::PowerFailure => 0.0,
        FaultKind::ProportionalOffset => {
            if rng.random_bool(0.5) {
                rng.random_range(0.5..0.9)
            } else {
                rng.random_range(1.1..1.5)
            }
        }
    };
    Ok(FaultSpec {
        kind,
        target,
        parameter,
        onset,
        seed: rng.random(),
    })
}

/// Synthetic sensor network: a few smooth latent demand factors mixed into
/// many sensors, plus a shared daily cycle and observation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthNetConfig {
    pub sensors: usize,
    pub factors: usize,
    /// Fixes the network (mixing matrix, base levels, cycle amplitudes).
    pub mixing_seed: u64,
    pub daily_amplitude: f64,
    /// Samples per daily cycle.
    pub period: usize,
    /// Noise standard deviation relative to each sensor's signal deviation.
    pub noise: f64,
    pub samples: usize,
}

impl Default for SynthNetConfig {
    fn default() -> Self {
        SynthNetConfig {
            sensors: 32,
            factors: 4,
            mixing_seed: 0,
            daily_amplitude: 1.0,
            period: 96,
            noise: 0.05,
            samples: 2000,
        }
    }
}

impl SynthNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sensors < 2 || self.factors == 0 || self.factors >= self.sensors {
            return Err(Error::invalid("synthetic network needs 0 < factors < sensors"));
        }
        if !(self.noise >= 0.0) || !self.daily_amplitude.is_finite() || self.period == 0 || self.samples == 0 {
            return Err(Error::invalid("invalid synthetic network parameters"));
        }
        Ok(())
    }
}

/// Persistence of the latent factor random walks.
const FACTOR_PERSISTENCE: f64 = 0.98;
/// Weight of the new value in the factor low-pass filter.
const FACTOR_SMOOTHING: f64 = 0.2;

pub fn synth_network_stream(config: &SynthNetConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let (d, r, n) = (config.sensors, config.factors, config.samples);

    let mut net_rng = derive_rng(config.mixing_seed, "synth-network");
    let mixing: Vec<f64> = (0..d * r).map(|_| net_rng.random_range(0.0..1.0)).collect();
    let base: Vec<f64> = (0..d).map(|_| net_rng.random_range(30.0..60.0)).collect();
    let cycle: Vec<f64> = (0..d)
        .map(|_| config.daily_amplitude * net_rng.random_range(0.5..1.5))
        .collect();

    let mut rng = derive_rng(seed, "synth-stream");
    let innovation = libm::sqrt(1.0 - FACTOR_PERSISTENCE * FACTOR_PERSISTENCE);
    let mut walk: Vec<f64> = (0..r).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut smooth = walk.clone();
    let mut signal = Matrix::zeros(n, d);
    for t in 0..n {
        for (w, s) in walk.iter_mut().zip(smooth.iter_mut()) {
            let e: f64 = StandardNormal.sample(&mut rng);
            *w = FACTOR_PERSISTENCE * *w + innovation * e;
            *s = FACTOR_SMOOTHING * *w + (1.0 - FACTOR_SMOOTHING) * *s;
        }
        let phase = libm::sin(2.0 * PI * t as f64 / config.period as f64);
        let row = signal.row_mut(t);
        for k in 0..d {
            let mix: f64 = (0..r).map(|j| mixing[k * r + j] * smooth[j]).sum();
            row[k] = mix + cycle[k] * phase;
        }
    }
    let signal_sd = signal.column_stds();
    let mut features = signal;
    for t in 0..n {
        let row = features.row_mut(t);
        for k in 0..d {
            let e: f64 = StandardNormal.sample(&mut rng);
            row[k] += base[k] + config.noise * signal_sd[k] * e;
        }
    }
    let names = (0..d).map(|k| alloc::format!("sensor_{k}")).collect();
    Dataset::new(features, None, Some(names))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffled k-fold partition of `0..n`; test folds differ in size by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::invalid("need at least two folds"));
    }
    if k > n {
        return Err(Error::invalid("more folds than samples"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derive_rng(seed, "kfold"));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut test = idx[start..start + len].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = idx[..start].iter().chain(&idx[start + len..]).copied().collect();
        train.sort_unstable();
        folds.push(Fold { train, test });
        start += len;
    }
    Ok(folds)
}
