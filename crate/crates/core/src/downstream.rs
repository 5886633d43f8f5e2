//! Frozen downstream task models: a multinomial logistic-regression
//! classifier and linear-regression virtual sensors.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;
use crate::nn::{Activation, Adam, AdamConfig, DenseLayer, DenseNetwork, Gradients, ParamHash};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticConfig {
    /// Full-batch optimizer steps.
    pub iterations: usize,
    pub optimizer: AdamConfig,
    /// L2 penalty `lambda/2 * ||W||^2` added to the mean cross-entropy.
    pub weight_decay: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            iterations: 7500,
            optimizer: AdamConfig::with_learning_rate(0.01),
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// One identity-activation layer producing class scores.
    scores: DenseNetwork,
    classes: Vec<i64>,
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = scores.iter().map(|s| libm::exp(s - max)).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    p
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

impl LogisticModel {
    pub fn train(x: &Matrix, y: &[i64], config: &LogisticConfig) -> Result<Self> {
        check_len("labels", x.rows(), y.len())?;
        if x.is_empty() {
            return Err(Error::Empty);
        }
        x.check_finite()?;
        let mut classes = y.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::invalid("logistic regression needs at least two classes"));
        }
        let targets: Vec<usize> = y.iter().map(|l| classes.binary_search(l).unwrap_or(0)).collect();
        let k = classes.len();
        let d = x.cols();
        let layer = DenseLayer::new(Matrix::zeros(k, d), vec![0.0; k], Activation::Identity)?;
        let mut net = DenseNetwork::new(vec![layer])?;
        let mut opt = Adam::new(config.optimizer, &net)?;
        let mut grads = Gradients::zeros_like(&net);
        let inv = 1.0 / x.rows() as f64;
        for _ in 0..config.iterations {
            grads.fill_zero();
            for (row, &t) in x.iter_rows().zip(&targets) {
                let (s, cache) = net.forward(row)?;
                let mut g = softmax(&s);
                g[t] -= 1.0;
                net.backward_accumulate(&cache, &g, &mut grads)?;
            }
            grads.scale(inv);
            let w = net.layers()[0].weights().as_slice();
            for (g, wi) in grads.layers[0].weights.iter_mut().zip(w) {
                *g += config.weight_decay * wi;
            }
            opt.step(&mut net, &grads)?;
        }
        Ok(LogisticModel { scores: net, classes })
    }

    pub fn classes(&self) -> &[i64] {
        &self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.scores.input_dim()
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.scores.predict(x)
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.scores(x)?))
    }

    pub fn predict_class(&self, x: &[f64]) -> Result<i64> {
        Ok(self.classes[argmax(&self.scores(x)?)])
    }

    pub fn accuracy(&self, x: &Matrix, y: &[i64]) -> Result<f64> {
        check_len("labels", x.rows(), y.len())?;
        let pred = x
            .iter_rows()
            .map(|r| self.predict_class(r))
            .collect::<Result<Vec<_>>>()?;
        accuracy(&pred, y)
    }

    pub fn fingerprint(&self) -> ParamHash {
        let mut h = Sha256::new();
        h.update(self.scores.fingerprint().0);
        for c in &self.classes {
            h.update(c.to_le_bytes());
        }
        finish(h)
    }
}

/// Fraction of positions where `pred == truth`.
pub fn accuracy(pred: &[i64], truth: &[i64]) -> Result<f64> {
    check_len("accuracy", truth.len(), pred.len())?;
    if truth.is_empty() {
        return Err(Error::Empty);
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Predicts feature `target` from all other features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualSensorModel {
    target: usize,
    inputs: Vec<usize>,
    weights: Vec<f64>,
    bias: f64,
}

/// Relative diagonal jitter added to the normal equations.
pub const RIDGE_JITTER: f64 = 1e-8;

impl VirtualSensorModel {
    /// Ordinary least squares via the centered normal equations.
    pub fn train(x: &Matrix, target: usize) -> Result<Self> {
        let d = x.cols();
        if d < 2 {
            return Err(Error::invalid("virtual sensors need at least two features"));
        }
        if target >= d {
            return Err(Error::invalid("target feature out of range"));
        }
        if x.rows() <= d {
            return Err(Error::TooFewSamples {
                needed: d + 1,
                got: x.rows(),
            });
        }
        x.check_finite()?;
        let inputs: Vec<usize> = (0..d).filter(|&j| j != target).collect();
        let p = inputs.len();
        let means = x.column_means();
        let mut gram = DMatrix::<f64>::zeros(p, p);
        let mut rhs = DVector::<f64>::zeros(p);
        let mut centered = vec![0.0; p];
        for row in x.iter_rows() {
            for (c, &j) in centered.iter_mut().zip(&inputs) {
                *c = row[j] - means[j];
            }
            let yc = row[target] - means[target];
            for a in 0..p {
                rhs[a] += centered[a] * yc;
                for b in a..p {
                    gram[(a, b)] += centered[a] * centered[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        let mean_diag = (0..p).map(|a| gram[(a, a)]).sum::<f64>() / p as f64;
        let jitter = RIDGE_JITTER * if mean_diag > 0.0 { mean_diag } else { 1.0 };
        for a in 0..p {
            gram[(a, a)] += jitter;
        }
        let chol = gram.cholesky().ok_or(Error::Singular)?;
        let w = chol.solve(&rhs);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular);
        }
        let weights: Vec<f64> = w.iter().copied().collect();
        let bias = means[target] - inputs.iter().zip(&weights).map(|(&j, wj)| means[j] * wj).sum::<f64>();
        Ok(VirtualSensorModel {
            target,
            inputs,
            weights,
            bias,
        })
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn inputs(&self) -> &[usize] {
        &self.inputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Prediction from a full sample; the target coordinate is ignored.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_len("virtual sensor input", self.inputs.len() + 1, x.len())?;
        Ok(self.bias
            + self
                .inputs
                .iter()
                .zip(&self.weights)
                .map(|(&j, w)| x[j] * w)
                .sum::<f64>())
    }

    pub fn predict_matrix(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.iter_rows().map(|r| self.predict(r)).collect()
    }

    /// R^2 of predictions from `inputs` against the target column of `truth`.
    pub fn score(&self, inputs: &Matrix, truth: &Matrix) -> Result<f64> {
        check_len("score rows", truth.rows(), inputs.rows())?;
        let pred = self.predict_matrix(inputs)?;
        r2_score(&truth.column(self.target), &pred)
    }

    pub fn fingerprint(&self) -> ParamHash {
        let mut h = Sha256::new();
        h.update((self.target as u64).to_le_bytes());
        for v in self.weights.iter().chain(core::iter::once(&self.bias)) {
            h.update(v.to_bits().to_le_bytes());
        }
        finish(h)
    }
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2_score(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_len("r2 arguments", y_true.len(), y_pred.len())?;
    if y_true.is_empty() {
        return Err(Error::Empty);
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot <= 1e-20 * n * (1.0 + mean * mean) {
        return Err(Error::UndefinedMetric("R^2 of a zero-variance target"));
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

fn finish(h: Sha256) -> ParamHash {
    let mut out = [0u8; 32];
    out.copy_from_slice(&h.finalize());
    ParamHash(out)
}
