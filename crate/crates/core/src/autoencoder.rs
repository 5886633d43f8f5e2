//! The distribution model: an undercomplete autoencoder over standardized
//! features.
//!
//! Losses are mean-squared errors measured in standardized units
//! (`scale(x)` against the decoder output), so every feature contributes on
//! the same footing regardless of its physical unit. [`Autoencoder::reconstruct`]
//! maps back to the original feature space.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;
use crate::nn::{mse, mse_loss, Activation, Adam, AdamConfig, DenseNetwork, Gradients, ParamHash};
use crate::rng::derive_rng;

/// Per-feature z-score transform fitted on the pre-drift window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScaler")]
pub struct FeatureScaler {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

#[derive(Deserialize)]
struct RawScaler {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl TryFrom<RawScaler> for FeatureScaler {
    type Error = Error;

    fn try_from(raw: RawScaler) -> Result<Self> {
        FeatureScaler::new(raw.mean, raw.scale)
    }
}

impl FeatureScaler {
    /// Features whose standard deviation is below `min_scale_ratio` times the
    /// average standard deviation are clamped to that floor; features with no
    /// variance at all pass through with scale 1.
    pub fn fit(data: &Matrix, min_scale_ratio: f64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty);
        }
        let mean = data.column_means();
        let stds = data.column_stds();
        let avg = stds.iter().sum::<f64>() / stds.len().max(1) as f64;
        let floor = min_scale_ratio.max(0.0) * avg;
        let scale = stds
            .iter()
            .map(|&s| {
                if s <= f64::EPSILON * (1.0 + avg) {
                    1.0
                } else {
                    s.max(floor)
                }
            })
            .collect();
        Ok(FeatureScaler { mean, scale })
    }

    pub fn new(mean: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        check_len("scaler scale", mean.len(), scale.len())?;
        if scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("scaler needs finite means and positive scales"));
        }
        Ok(FeatureScaler { mean, scale })
    }

    pub fn identity(dim: usize) -> Self {
        FeatureScaler {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }

    pub fn transform_matrix(&self, data: &Matrix) -> Result<Matrix> {
        check_len("scaler input", self.dim(), data.cols())?;
        data.map_rows(self.dim(), |r| Ok(self.transform(r)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeConfig {
    /// Encoder hidden widths (the decoder mirrors them). `None` picks
    /// `max(8, d/2, latent)`.
    pub hidden: Option<Vec<usize>>,
    /// `None` picks `max(4, d/4)`, capped at `d - 1`.
    pub latent: Option<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub min_samples: usize,
    /// Early stop once the epoch loss has not improved by more than
    /// `tolerance` for `patience` epochs.
    pub patience: usize,
    pub tolerance: f64,
    /// Scale floor relative to the average feature standard deviation, so
    /// rarely active features cannot dominate the loss.
    pub min_scale_ratio: f64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            hidden: None,
            latent: None,
            activation: Activation::Relu,
            epochs: 500,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            min_samples: 50,
            patience: 20,
            tolerance: 1e-6,
            min_scale_ratio: 1.0,
        }
    }
}

impl AeConfig {
    /// Encoder widths from input to latent, inclusive.
    pub fn encoder_dims(&self, input_dim: usize) -> Result<Vec<usize>> {
        if input_dim < 2 {
            return Err(Error::invalid("autoencoder needs at least two features"));
        }
        let latent = self.latent.unwrap_or_else(|| (input_dim / 4).max(4).min(input_dim - 1));
        if latent == 0 || latent >= input_dim {
            return Err(Error::invalid("latent width must be in 1..input_dim"));
        }
        let hidden = match &self.hidden {
            Some(h) => h.clone(),
            None => vec![(input_dim / 2).max(8).max(latent)],
        };
        if hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        let mut dims = vec![input_dim];
        dims.extend(hidden);
        dims.push(latent);
        Ok(dims)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory {
    pub initial_loss: f64,
    /// Mean mini-batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    encoder: DenseNetwork,
    decoder: DenseNetwork,
    scaler: FeatureScaler,
    frozen: bool,
}

impl Autoencoder {
    /// Assembles a model from parts. The result is not frozen; call
    /// [`freeze`](Self::freeze) before using it as a reference.
    pub fn from_parts(encoder: DenseNetwork, decoder: DenseNetwork, scaler: FeatureScaler) -> Result<Self> {
        let d = decoder.output_dim();
        check_len("encoder input", d, encoder.input_dim())?;
        check_len("decoder input", encoder.output_dim(), decoder.input_dim())?;
        check_len("scaler", d, scaler.dim())?;
        if encoder.output_dim() >= d {
            return Err(Error::invalid("autoencoder must be undercomplete (latent < input)"));
        }
        Ok(Autoencoder {
            encoder,
            decoder,
            scaler,
            frozen: false,
        })
    }

    /// Validates a deserialized model.
    pub fn validate(&self) -> Result<()> {
        Autoencoder::from_parts(self.encoder.clone(), self.decoder.clone(), self.scaler.clone()).map(|_| ())
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn input_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn encoder(&self) -> &DenseNetwork {
        &self.encoder
    }

    pub fn decoder(&self) -> &DenseNetwork {
        &self.decoder
    }

    pub fn scaler(&self) -> &FeatureScaler {
        &self.scaler
    }

    /// Fits encoder and decoder on drift-free data and returns the frozen model.
    pub fn train(data: &Matrix, config: &AeConfig, seed: u64) -> Result<(Autoencoder, TrainingHistory)> {
        if data.rows() < config.min_samples.max(1) {
            return Err(Error::TooFewSamples {
                needed: config.min_samples.max(1),
                got: data.rows(),
            });
        }
        data.check_finite()?;
        if config.batch_size == 0 || config.epochs == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        let d = data.cols();
        let enc_dims = config.encoder_dims(d)?;
        let mut dec_dims = enc_dims.clone();
        dec_dims.reverse();

        let mut rng = derive_rng(seed, "autoencoder");
        let encoder = DenseNetwork::random(&enc_dims, config.activation, config.activation, &mut rng)?;
        let decoder = DenseNetwork::random(&dec_dims, config.activation, Activation::Identity, &mut rng)?;
        let scaler = FeatureScaler::fit(data, config.min_scale_ratio)?;
        let z = scaler.transform_matrix(data)?;
        let mut model = Autoencoder::from_parts(encoder, decoder, scaler)?;

        let mut enc_opt = Adam::new(config.optimizer, &model.encoder)?;
        let mut dec_opt = Adam::new(config.optimizer, &model.decoder)?;
        let mut enc_g = Gradients::zeros_like(&model.encoder);
        let mut dec_g = Gradients::zeros_like(&model.decoder);

        let mut history = TrainingHistory {
            initial_loss: model.scaled_loss_mean(&z)?,
            ..Default::default()
        };
        let mut order: Vec<usize> = (0..z.rows()).collect();
        let mut best = f64::INFINITY;
        let mut since_best = 0;
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(config.batch_size) {
                enc_g.fill_zero();
                dec_g.fill_zero();
                for &i in batch {
                    let zi = z.row(i);
                    let (latent, enc_cache) = model.encoder.forward(zi)?;
                    let (recon, dec_cache) = model.decoder.forward(&latent)?;
                    let l = mse_loss(&recon, zi)?;
                    epoch_loss += l.loss;
                    let g_latent = model
                        .decoder
                        .backward_accumulate(&dec_cache, &l.grad_wrt_x_hat, &mut dec_g)?;
                    model.encoder.backward_accumulate(&enc_cache, &g_latent, &mut enc_g)?;
                }
                let inv = 1.0 / batch.len() as f64;
                enc_g.scale(inv);
                dec_g.scale(inv);
                enc_opt.step(&mut model.encoder, &enc_g)?;
                dec_opt.step(&mut model.decoder, &dec_g)?;
            }
            let epoch_loss = epoch_loss / z.rows() as f64;
            if !epoch_loss.is_finite() {
                return Err(Error::Divergence("autoencoder training loss".into()));
            }
            history.epoch_losses.push(epoch_loss);
            if epoch_loss < best - config.tolerance {
                best = epoch_loss;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
        }
        history.final_loss = model.scaled_loss_mean(&z)?;
        Ok((model.freeze(), history))
    }

    /// Decoder output for an already standardized sample.
    fn reconstruct_scaled(&self, z: &[f64]) -> Result<Vec<f64>> {
        let latent = self.encoder.predict(z)?;
        self.decoder.predict(&latent)
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("autoencoder input", self.input_dim(), x.len())?;
        let z = self.scaler.transform(x);
        Ok(self.scaler.inverse(&self.reconstruct_scaled(&z)?))
    }

    pub fn reconstruct_matrix(&self, data: &Matrix) -> Result<Matrix> {
        data.map_rows(self.input_dim(), |r| self.reconstruct(r))
    }

    /// Reconstruction loss of one sample (standardized units).
    pub fn sample_loss(&self, x: &[f64]) -> Result<f64> {
        check_len("autoencoder input", self.input_dim(), x.len())?;
        let z = self.scaler.transform(x);
        Ok(mse(&self.reconstruct_scaled(&z)?, &z))
    }

    /// Mean per-sample reconstruction loss over `data`.
    pub fn reconstruction_loss(&self, data: &Matrix) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Empty);
        }
        check_len("autoencoder input", self.input_dim(), data.cols())?;
        let mut total = 0.0;
        for r in data.iter_rows() {
            total += self.sample_loss(r)?;
        }
        Ok(total / data.rows() as f64)
    }

    /// Loss of one sample together with its gradient with respect to the
    /// original-space input. The input enters the loss twice (as the
    /// autoencoder's input and as the reconstruction target); both paths are
    /// included.
    pub fn loss_input_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len("autoencoder input", self.input_dim(), x.len())?;
        let z = self.scaler.transform(x);
        let (latent, enc_cache) = self.encoder.forward(&z)?;
        let (recon, dec_cache) = self.decoder.forward(&latent)?;
        let l = mse_loss(&recon, &z)?;
        let (_, g_latent) = self.decoder.backward(&dec_cache, &l.grad_wrt_x_hat)?;
        let (_, g_z) = self.encoder.backward(&enc_cache, &g_latent)?;
        let grad = g_z
            .iter()
            .zip(&l.grad_wrt_x)
            .zip(self.scaler.scale())
            .map(|((a, b), s)| (a + b) / s)
            .collect();
        Ok((l.loss, grad))
    }

    /// Hash over encoder, decoder and scaler parameters.
    pub fn fingerprint(&self) -> ParamHash {
        let mut h = Sha256::new();
        h.update(self.encoder.fingerprint().0);
        h.update(self.decoder.fingerprint().0);
        for v in self.scaler.mean.iter().chain(&self.scaler.scale) {
            h.update(v.to_bits().to_le_bytes());
        }
        let mut out = [0u8; 32];
        out.copy_from_slice(&h.finalize());
        ParamHash(out)
    }

    fn scaled_loss_mean(&self, z: &Matrix) -> Result<f64> {
        let mut total = 0.0;
        for r in z.iter_rows() {
            total += mse(&self.reconstruct_scaled(r)?, r);
        }
        Ok(total / z.rows().max(1) as f64)
    }
}
