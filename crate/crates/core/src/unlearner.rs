//! The corrective input map `f` and its fitting problem.
//!
//! For post-drift samples `x_j` the fitted map minimizes
//!
//! ```text
//! 1/|D*| * sum_j [ l(ae(f(x_j)), f(x_j)) + C * || (f(x_j) - x_j) / s ||_1 ]
//! ```
//!
//! where `l` is the autoencoder's standardized reconstruction loss and `s`
//! the autoencoder's per-feature scale. Both arguments of `l` depend on `f`,
//! and gradients reach `f` through the frozen autoencoder's input gradient.
//! The L1 term is handled by a subgradient with `sign(0) = 0`.
//!
//! Deployment applies `f` alone; the autoencoder is never chained in front
//! of the downstream models.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autoencoder::Autoencoder;
use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;
use crate::nn::{Activation, Adam, AdamConfig, DenseLayer, DenseNetwork, Gradients, ParamHash};
use crate::rng::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapKind {
    /// `f(x) = A x + b`.
    Affine,
    /// `f(x) = x + b`: an affine map with `A` pinned to the identity.
    Shift,
    /// `f(x) = x + g(x)` with `g` a one-hidden-layer tanh network whose
    /// output layer starts at zero.
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnlearnConfig {
    pub kind: MapKind,
    pub mlp_hidden: usize,
    /// Regularization strength `C >= 0`.
    pub regularization: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub min_samples: usize,
    pub patience: usize,
    pub tolerance: f64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            kind: MapKind::Affine,
            mlp_hidden: 16,
            regularization: 0.015,
            epochs: 300,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            min_samples: 50,
            patience: 20,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnMap {
    kind: MapKind,
    body: DenseNetwork,
    regularization: f64,
    fitted_on: usize,
}

impl UnlearnMap {
    /// `A = I`, `b = 0`.
    pub fn identity(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("map dimension must be at least 1"));
        }
        let layer = DenseLayer::new(Matrix::identity(dim), alloc::vec![0.0; dim], Activation::Identity)?;
        Ok(UnlearnMap {
            kind: MapKind::Affine,
            body: DenseNetwork::new(alloc::vec![layer])?,
            regularization: 0.0,
            fitted_on: 0,
        })
    }

    pub fn affine(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() != weights.cols() {
            return Err(Error::invalid("affine map must be square"));
        }
        let layer = DenseLayer::new(weights, bias, Activation::Identity)?;
        Ok(UnlearnMap {
            kind: MapKind::Affine,
            body: DenseNetwork::new(alloc::vec![layer])?,
            regularization: 0.0,
            fitted_on: 0,
        })
    }

    /// Translation-only map, starting at `b = 0`.
    pub fn shift(dim: usize) -> Result<Self> {
        let mut map = UnlearnMap::identity(dim)?;
        map.kind = MapKind::Shift;
        Ok(map)
    }

    /// Residual MLP map that is exactly the identity at construction.
    pub fn residual_mlp(dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::invalid("map dimensions must be positive"));
        }
        let mut rng = derive_rng(seed, "unlearn-mlp");
        let first = DenseLayer::random(dim, hidden, Activation::Tanh, &mut rng)?;
        let last = DenseLayer::new(Matrix::zeros(dim, hidden), alloc::vec![0.0; dim], Activation::Identity)?;
        Ok(UnlearnMap {
            kind: MapKind::Mlp,
            body: DenseNetwork::new(alloc::vec![first, last])?,
            regularization: 0.0,
            fitted_on: 0,
        })
    }

    /// Checks the structural invariants of a deserialized map.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        check_len("map output", d, self.body.output_dim())?;
        if !(self.regularization >= 0.0) {
            return Err(Error::invalid("regularization must be non-negative"));
        }
        if self.kind != MapKind::Mlp
            && (self.body.layers().len() != 1 || self.body.layers()[0].activation() != Activation::Identity)
        {
            return Err(Error::invalid("affine map must be a single identity-activation layer"));
        }
        if self.kind == MapKind::Shift && *self.body.layers()[0].weights() != Matrix::identity(d) {
            return Err(Error::invalid("shift map must have identity weights"));
        }
        Ok(())
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.body.input_dim()
    }

    pub fn body(&self) -> &DenseNetwork {
        &self.body
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn fitted_on(&self) -> usize {
        self.fitted_on
    }

    /// `(A, b)` for the affine and shift kinds.
    pub fn affine_parts(&self) -> Option<(&Matrix, &[f64])> {
        match self.kind {
            MapKind::Affine | MapKind::Shift => {
                let l = &self.body.layers()[0];
                Some((l.weights(), l.bias()))
            }
            MapKind::Mlp => None,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.body.predict(x)?;
        Ok(match self.kind {
            MapKind::Affine | MapKind::Shift => y,
            MapKind::Mlp => y.iter().zip(x).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn apply_matrix(&self, data: &Matrix) -> Result<Matrix> {
        data.map_rows(self.dim(), |r| self.apply(r))
    }

    pub fn fingerprint(&self) -> ParamHash {
        self.body.fingerprint()
    }

    /// Trainable parameters: all of the body, or only `b` for the shift kind.
    pub fn params(&self) -> Vec<f64> {
        match self.kind {
            MapKind::Shift => self.body.layers()[0].bias().to_vec(),
            _ => self.body.to_flat(),
        }
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        match self.kind {
            MapKind::Shift => {
                let d = self.dim();
                check_len("shift parameters", d, params.len())?;
                let mut flat = Matrix::identity(d).as_slice().to_vec();
                flat.extend_from_slice(params);
                self.body.set_flat(&flat)
            }
            _ => self.body.set_flat(params),
        }
    }
}

/// Subgradient of `||f_out - x||_1` with `sign(0) = 0`.
pub fn l1_penalty_grad(f_out: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_len("l1 arguments", x.len(), f_out.len())?;
    Ok(f_out.iter().zip(x).map(|(a, b)| sign(a - b)).collect())
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// The two averaged terms of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    pub reconstruction: f64,
    /// Already multiplied by `C`.
    pub penalty: f64,
}

impl ObjectiveParts {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.penalty
    }
}

fn check_inputs(ae: &Autoencoder, f: &UnlearnMap, data: &Matrix, c: f64) -> Result<()> {
    check_len("map vs autoencoder", ae.input_dim(), f.dim())?;
    check_len("samples vs map", f.dim(), data.cols())?;
    if data.is_empty() {
        return Err(Error::Empty);
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::invalid("regularization C must be finite and >= 0"));
    }
    Ok(())
}

pub fn objective_parts(ae: &Autoencoder, f: &UnlearnMap, data: &Matrix, c: f64) -> Result<ObjectiveParts> {
    check_inputs(ae, f, data, c)?;
    let scale = ae.scaler().scale();
    let (mut rec, mut pen) = (0.0, 0.0);
    for x in data.iter_rows() {
        let u = f.apply(x)?;
        rec += ae.sample_loss(&u)?;
        pen += u
            .iter()
            .zip(x)
            .zip(scale)
            .map(|((a, b), s)| libm::fabs(a - b) / s)
            .sum::<f64>();
    }
    let n = data.rows() as f64;
    Ok(ObjectiveParts {
        reconstruction: rec / n,
        penalty: c * pen / n,
    })
}

pub fn unlearn_objective(ae: &Autoencoder, f: &UnlearnMap, data: &Matrix, c: f64) -> Result<f64> {
    objective_parts(ae, f, data, c).map(|p| p.total())
}

/// Objective over the rows in `idx` and its gradient with respect to the
/// map's parameters (accumulated into `grads`, averaged over `idx`).
fn objective_gradient_rows(
    ae: &Autoencoder,
    f: &UnlearnMap,
    data: &Matrix,
    idx: &[usize],
    c: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    let scale = ae.scaler().scale();
    let mut total = 0.0;
    grads.fill_zero();
    for &i in idx {
        let x = data.row(i);
        let (y, cache) = f.body.forward(x)?;
        let u: Vec<f64> = match f.kind {
            MapKind::Affine | MapKind::Shift => y,
            MapKind::Mlp => y.iter().zip(x).map(|(a, b)| a + b).collect(),
        };
        let (loss, mut g_u) = ae.loss_input_gradient(&u)?;
        let mut pen = 0.0;
        for ((g, (a, b)), s) in g_u.iter_mut().zip(u.iter().zip(x)).zip(scale) {
            pen += libm::fabs(a - b) / s;
            *g += c * sign(a - b) / s;
        }
        total += loss + c * pen;
        f.body.backward_accumulate(&cache, &g_u, grads)?;
    }
    if f.kind == MapKind::Shift {
        // Zero gradients keep Adam from ever moving the pinned weights.
        grads.layers[0].weights.iter_mut().for_each(|g| *g = 0.0);
    }
    let inv = 1.0 / idx.len() as f64;
    grads.scale(inv);
    Ok(total * inv)
}

/// Full-data objective and its parameter gradient (flattened like
/// [`UnlearnMap::params`]).
pub fn objective_gradient(ae: &Autoencoder, f: &UnlearnMap, data: &Matrix, c: f64) -> Result<(f64, Vec<f64>)> {
    check_inputs(ae, f, data, c)?;
    let idx: Vec<usize> = (0..data.rows()).collect();
    let mut grads = Gradients::zeros_like(&f.body);
    let v = objective_gradient_rows(ae, f, data, &idx, c, &mut grads)?;
    let flat = match f.kind {
        MapKind::Shift => grads.layers[0].bias.clone(),
        _ => grads.to_flat(),
    };
    Ok((v, flat))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub map: UnlearnMap,
    pub initial_objective: f64,
    /// Objective of the returned (best-seen) iterate.
    pub final_objective: f64,
    pub epochs_run: usize,
}

/// Fits the map on unlabeled post-drift samples. The returned map is the
/// best iterate seen, so its objective never exceeds the identity's.
pub fn fit_unlearner(ae: &Autoencoder, data: &Matrix, config: &UnlearnConfig, seed: u64) -> Result<FitReport> {
    if !ae.is_frozen() {
        return Err(Error::NotFrozen);
    }
    if data.rows() < config.min_samples.max(1) {
        return Err(Error::TooFewSamples {
            needed: config.min_samples.max(1),
            got: data.rows(),
        });
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    data.check_finite()?;
    let c = config.regularization;
    let d = ae.input_dim();
    let mut map = match config.kind {
        MapKind::Affine => UnlearnMap::identity(d)?,
        MapKind::Shift => UnlearnMap::shift(d)?,
        MapKind::Mlp => UnlearnMap::residual_mlp(d, config.mlp_hidden, seed)?,
    };
    map.regularization = c;
    map.fitted_on = data.rows();
    check_inputs(ae, &map, data, c)?;

    let initial = unlearn_objective(ae, &map, data, c)?;
    if !initial.is_finite() {
        return Err(Error::Divergence("initial unlearning objective".into()));
    }
    let mut best = (initial, map.params());
    let mut opt = Adam::new(config.optimizer, &map.body)?;
    let mut grads = Gradients::zeros_like(&map.body);
    let mut rng = derive_rng(seed, "unlearn");
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let mut since_best = 0;
    let mut epochs_run = 0;
    for _ in 0..config.epochs {
        epochs_run += 1;
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            objective_gradient_rows(ae, &map, data, batch, c, &mut grads)?;
            opt.step(&mut map.body, &grads)?;
        }
        let obj = unlearn_objective(ae, &map, data, c)?;
        if !obj.is_finite() {
            return Err(Error::Divergence("unlearning objective".into()));
        }
        if obj < best.0 - config.tolerance {
            since_best = 0;
        } else {
            since_best += 1;
        }
        if obj < best.0 {
            best = (obj, map.params());
        }
        if since_best >= config.patience {
            break;
        }
    }
    map.set_params(&best.1)?;
    Ok(FitReport {
        map,
        initial_objective: initial,
        final_objective: best.0,
        epochs_run,
    })
}
