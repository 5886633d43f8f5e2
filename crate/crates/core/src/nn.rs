//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Gradients are available with respect to parameters *and* inputs; the
//! unlearner needs the latter to push gradients through a frozen
//! autoencoder into the map in front of it. There is no global tape: every
//! [`DenseNetwork::forward`] returns an explicit [`ForwardCache`] that the
//! matching [`DenseNetwork::backward`] consumes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => libm::tanh(z),
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative at pre-activation `z`, given the already computed output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
        }
    }
}

/// `y = act(W x + b)` with `W` of shape `[out_dim x in_dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLayer")]
pub struct DenseLayer {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

#[derive(Deserialize)]
struct RawLayer {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

impl TryFrom<RawLayer> for DenseLayer {
    type Error = Error;

    fn try_from(raw: RawLayer) -> Result<Self> {
        DenseLayer::new(raw.weights, raw.bias, raw.activation)
    }
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        check_len("layer bias", weights.rows(), bias.len())?;
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    /// Weights uniform in `[-1/sqrt(in_dim), 1/sqrt(in_dim)]`, zero bias.
    pub fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        let bound = 1.0 / libm::sqrt(in_dim as f64);
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Ok(DenseLayer {
            weights: Matrix::from_vec(out_dim, in_dim, data)?,
            bias: vec![0.0; out_dim],
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn num_params(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len()
    }

    fn forward_into(&self, x: &[f64], pre: &mut [f64], out: &mut [f64]) {
        self.weights.matvec_into(x, pre);
        for ((p, b), o) in pre.iter_mut().zip(&self.bias).zip(out.iter_mut()) {
            *p += b;
            *o = self.activation.apply(*p);
        }
    }
}

/// Per-layer gradient (or accumulator) buffers, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    /// Row-major `[out_dim x in_dim]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.in_dim() * l.out_dim()],
                    bias: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|g| *g = 0.0);
            l.bias.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|g| *g *= factor);
            l.bias.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Flattened in the same order as [`DenseNetwork::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    fn check_shape(&self, net: &DenseNetwork) -> Result<()> {
        check_len("gradient layers", net.layers.len(), self.layers.len())?;
        for (g, l) in self.layers.iter().zip(&net.layers) {
            check_len("gradient weights", l.in_dim() * l.out_dim(), g.weights.len())?;
            check_len("gradient bias", l.out_dim(), g.bias.len())?;
        }
        Ok(())
    }
}

/// Values retained by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    revision: u64,
    dims: Vec<usize>,
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// SHA-256 over a model's shapes and parameter bits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamHash(pub [u8; 32]);

impl fmt::Display for ParamHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for ParamHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ParamHash({self})")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork")]
pub struct DenseNetwork {
    layers: Vec<DenseLayer>,
    /// Bumped on every parameter mutation; caches from older revisions are
    /// rejected by `backward`.
    revision: u64,
}

#[derive(Deserialize)]
struct RawNetwork {
    layers: Vec<DenseLayer>,
    #[serde(default)]
    revision: u64,
}

impl TryFrom<RawNetwork> for DenseNetwork {
    type Error = Error;

    fn try_from(raw: RawNetwork) -> Result<Self> {
        let mut net = DenseNetwork::new(raw.layers)?;
        net.revision = raw.revision;
        Ok(net)
    }
}

impl DenseNetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            check_len("adjacent layer dims", pair[0].out_dim(), pair[1].in_dim())?;
        }
        Ok(DenseNetwork { layers, revision: 0 })
    }

    /// Stack with widths `dims[0] -> dims[1] -> ...`; every layer but the last
    /// uses `hidden`, the last uses `output`.
    pub fn random<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("need at least input and output widths"));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                DenseLayer::random(w[0], w[1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        DenseNetwork::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        check_len("network input", self.input_dim(), x.len())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        for layer in &self.layers {
            let mut z = vec![0.0; layer.out_dim()];
            let mut a = vec![0.0; layer.out_dim()];
            layer.forward_into(activations.last().unwrap(), &mut z, &mut a);
            pre.push(z);
            activations.push(a);
        }
        let cache = ForwardCache {
            revision: self.revision,
            dims: self.dims(),
            activations,
            pre,
        };
        Ok((cache.output().to_vec(), cache))
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("network input", self.input_dim(), x.len())?;
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut z = vec![0.0; layer.out_dim()];
            let mut a = vec![0.0; layer.out_dim()];
            layer.forward_into(&cur, &mut z, &mut a);
            cur = a;
        }
        Ok(cur)
    }

    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let mut grads = Gradients::zeros_like(self);
        let grad_in = self.backward_accumulate(cache, grad_out, &mut grads)?;
        Ok((grads, grad_in))
    }

    /// Like [`backward`](Self::backward) but adds into existing buffers, so a
    /// mini-batch can be accumulated without reallocating.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        grad_out: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        if cache.revision != self.revision {
            return Err(Error::StaleCache("parameters changed since the forward pass"));
        }
        if cache.dims != self.dims() {
            return Err(Error::StaleCache("cache was produced by a different architecture"));
        }
        check_len("backward grad_out", self.output_dim(), grad_out.len())?;
        grads.check_shape(self)?;

        let mut delta = grad_out.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.activations[l];
            let output = &cache.activations[l + 1];
            let g = &mut grads.layers[l];
            let in_dim = layer.in_dim();
            for (i, d) in delta.iter_mut().enumerate() {
                *d *= layer.activation.derivative(cache.pre[l][i], output[i]);
            }
            let mut next = vec![0.0; in_dim];
            for (i, &gz) in delta.iter().enumerate() {
                g.bias[i] += gz;
                if gz == 0.0 {
                    continue;
                }
                let w_row = layer.weights.row(i);
                let g_row = &mut g.weights[i * in_dim..(i + 1) * in_dim];
                for j in 0..in_dim {
                    g_row[j] += gz * input[j];
                    next[j] += w_row[j] * gz;
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    /// All parameters, layer by layer, weights (row-major) before bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, params: &[f64]) -> Result<()> {
        check_len("flat parameters", self.num_params(), params.len())?;
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.rows() * l.weights.cols();
            l.weights.as_mut_slice().copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        self.revision += 1;
        Ok(())
    }

    pub fn fingerprint(&self) -> ParamHash {
        let mut h = Sha256::new();
        for l in &self.layers {
            h.update((l.in_dim() as u64).to_le_bytes());
            h.update((l.out_dim() as u64).to_le_bytes());
            h.update([l.activation.tag()]);
            for v in l.weights.as_slice().iter().chain(&l.bias) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        let mut out = [0u8; 32];
        out.copy_from_slice(&h.finalize());
        ParamHash(out)
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.layers.len() + 1);
        d.push(self.input_dim());
        d.extend(self.layers.iter().map(DenseLayer::out_dim));
        d
    }
}

/// Mean-squared error and its gradient with respect to both arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct MseLoss {
    pub loss: f64,
    pub grad_wrt_x_hat: Vec<f64>,
    pub grad_wrt_x: Vec<f64>,
}

pub fn mse_loss(x_hat: &[f64], x: &[f64]) -> Result<MseLoss> {
    check_len("mse arguments", x_hat.len(), x.len())?;
    if x.is_empty() {
        return Err(Error::Empty);
    }
    let d = x.len() as f64;
    let mut loss = 0.0;
    let mut g = Vec::with_capacity(x.len());
    for (a, b) in x_hat.iter().zip(x) {
        let r = a - b;
        loss += r * r;
        g.push(2.0 * r / d);
    }
    let neg = g.iter().map(|v| -v).collect();
    Ok(MseLoss {
        loss: loss / d,
        grad_wrt_x_hat: g,
        grad_wrt_x: neg,
    })
}

/// Loss value only.
#[inline]
pub(crate) fn mse(x_hat: &[f64], x: &[f64]) -> f64 {
    let s: f64 = x_hat.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    s / x.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

/// Adaptive-moment optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Gradients,
    second: Gradients,
}

impl Adam {
    pub fn new(config: AdamConfig, net: &DenseNetwork) -> Result<Self> {
        if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::invalid("moment decay rates must lie in [0, 1)"));
        }
        Ok(Adam {
            config,
            step: 0,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step(&mut self, net: &mut DenseNetwork, grads: &Gradients) -> Result<()> {
        grads.check_shape(net)?;
        self.first.check_shape(net)?;
        for (l, g) in grads.layers.iter().enumerate() {
            if let Some(i) = g.weights.iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!("gradient of layer {l} weights[{i}]")));
            }
            if let Some(i) = g.bias.iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!("gradient of layer {l} bias[{i}]")));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (libm::sqrt(v_hat) + epsilon);
            }
        };
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let g = &grads.layers[l];
            let m = &mut self.first.layers[l];
            let v = &mut self.second.layers[l];
            update(layer.weights.as_mut_slice(), &g.weights, &mut m.weights, &mut v.weights);
            update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias);
            if let Some(i) = layer.weights.as_slice().iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!("layer {l} weights[{i}]")));
            }
            if let Some(i) = layer.bias.iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!("layer {l} bias[{i}]")));
            }
        }
        net.revision += 1;
        Ok(())
    }
}

/// Central finite differences of `loss` at `params`, one coordinate at a time.
pub fn finite_diff_grad<F>(mut loss: F, params: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = p[i];
        p[i] = orig + step;
        let up = loss(&p)?;
        p[i] = orig - step;
        let down = loss(&p)?;
        p[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Relative error used by the gradient checks: `|a - b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = 1.0f64.max(libm::fabs(a)).max(libm::fabs(b));
    libm::fabs(a - b) / scale
}
