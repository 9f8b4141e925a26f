//! Per-class variational auto-encoder: one-class scorer and pseudo-sample generator.
//!
//! ```text
//! x -> encoder (ReLU MLP) -> [mean | log_variance] -> z = mean + exp(0.5 lv) * noise
//!   -> decoder (ReLU MLP, sigmoid/identity output) -> x_hat
//! score(x) = sum_d (x_hat_d - x_d)^2
//! ```

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numcore::{Activation, Mlp, MlpTrace, ParamSlot, Tensor};

/// Which latent is decoded when scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// One reparameterized draw per row, as during training.
    TrainSampled,
    /// Decode the latent mean; deterministic.
    EvalMean,
}

/// Encoder output for a batch, all tensors `(batch, latent_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDraw {
    pub mean: Tensor,
    pub log_variance: Tensor,
    pub sample: Tensor,
    pub noise: Tensor,
}

/// Forward values kept for one training step.
#[derive(Debug, Clone)]
pub struct VaeTrace {
    encoder: MlpTrace,
    decoder: MlpTrace,
    pub draw: LatentDraw,
    /// Per-row anomaly scores under the sampled latent.
    pub scores: Vec<f64>,
}

impl VaeTrace {
    pub fn reconstruction(&self) -> &Tensor {
        self.decoder.output()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassVae {
    label: u32,
    encoder: Mlp,
    decoder: Mlp,
    latent_dim: usize,
    frozen: bool,
}

impl ClassVae {
    /// Encoder `input -> hidden... -> 2 * latent`, decoder `latent -> reversed hidden... -> input`.
    pub fn new<R: Rng + ?Sized>(
        label: u32,
        input_dim: usize,
        hidden_widths: &[usize],
        latent_dim: usize,
        decoder_output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut enc_dims = vec![input_dim];
        enc_dims.extend_from_slice(hidden_widths);
        enc_dims.push(2 * latent_dim);
        let mut dec_dims = vec![latent_dim];
        dec_dims.extend(hidden_widths.iter().rev());
        dec_dims.push(input_dim);
        let encoder = Mlp::new(&enc_dims, Activation::Identity, rng)?;
        let decoder = Mlp::new(&dec_dims, decoder_output, rng)?;
        Self::from_parts(label, encoder, decoder, false)
    }

    pub fn from_parts(label: u32, encoder: Mlp, decoder: Mlp, frozen: bool) -> Result<Self> {
        let latent_dim = decoder.in_dim();
        if encoder.out_dim() != 2 * latent_dim {
            return Err(Error::dims(
                "ClassVae encoder output",
                &[encoder.out_dim()],
                &[2 * latent_dim],
            ));
        }
        if decoder.out_dim() != encoder.in_dim() {
            return Err(Error::dims(
                "ClassVae decoder output",
                &[decoder.out_dim()],
                &[encoder.in_dim()],
            ));
        }
        Ok(Self {
            label,
            encoder,
            decoder,
            latent_dim,
            frozen,
        })
    }

    pub fn label(&self) -> u32 {
        self.label
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.decoder.num_params()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dims(
                "ClassVae input",
                x.shape(),
                &[self.input_dim()],
            ));
        }
        Ok(())
    }

    /// Latent mean and log-variance, each `(batch, latent_dim)`.
    pub fn encode_moments(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        self.encoder.forward(x)?.split_cols(self.latent_dim)
    }

    /// Encodes and draws one reparameterized latent per row.
    pub fn encode<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<LatentDraw> {
        let noise = standard_normal(&[x.rows(), self.latent_dim], rng);
        self.encode_with_noise(x, noise)
    }

    pub fn encode_with_noise(&self, x: &Tensor, noise: Tensor) -> Result<LatentDraw> {
        let (mean, log_variance) = self.encode_moments(x)?;
        reparameterize(mean, log_variance, noise)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        if z.cols() != self.latent_dim {
            return Err(Error::dims(
                "ClassVae decode",
                z.shape(),
                &[self.latent_dim],
            ));
        }
        self.decoder.forward(z)
    }

    /// Anomaly score of each row of `x`: squared reconstruction error, summed over features.
    pub fn anomaly_scores<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        mode: ScoreMode,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let z = match mode {
            ScoreMode::EvalMean => self.encode_moments(x)?.0,
            ScoreMode::TrainSampled => self.encode(x, rng)?.sample,
        };
        let recon = self.decode(&z)?;
        Ok(row_sse(&recon, x))
    }

    /// Deterministic scores using the latent mean.
    pub fn eval_scores(&self, x: &Tensor) -> Result<Vec<f64>> {
        let (mean, _) = self.encode_moments(x)?;
        let recon = self.decode(&mean)?;
        Ok(row_sse(&recon, x))
    }

    /// Decodes `count` standard-normal latents. Only frozen VAEs generate.
    pub fn generate_pseudo<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Tensor> {
        if !self.frozen {
            return Err(Error::Contract(format!(
                "pseudo samples requested from class {} before it was frozen",
                self.label
            )));
        }
        if count == 0 {
            return Ok(Tensor::zeros(&[0, self.input_dim()]));
        }
        let z = standard_normal(&[count, self.latent_dim], rng);
        self.decoder.forward(&z)
    }

    /// Forward pass with one reparameterized draw per row, recording activations.
    pub fn forward_train<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<VaeTrace> {
        let noise = standard_normal(&[x.rows(), self.latent_dim], rng);
        self.forward_train_with_noise(x, noise)
    }

    pub fn forward_train_with_noise(&self, x: &Tensor, noise: Tensor) -> Result<VaeTrace> {
        self.check_input(x)?;
        let encoder = self.encoder.forward_trace(x)?;
        let (mean, log_variance) = encoder.output().split_cols(self.latent_dim)?;
        let draw = reparameterize(mean, log_variance, noise)?;
        let decoder = self.decoder.forward_trace(&draw.sample)?;
        let scores = row_sse(decoder.output(), x);
        Ok(VaeTrace {
            encoder,
            decoder,
            draw,
            scores,
        })
    }

    /// Backpropagates `sum_b score_grad[b] * score_b + sum_b kl_weight[b] * kl_b`,
    /// where `kl_b` is the KL divergence of row `b`'s latent from N(0, I).
    pub fn backward(
        &mut self,
        trace: &VaeTrace,
        score_grad: &[f64],
        kl_weight: &[f64],
    ) -> Result<()> {
        if self.frozen {
            return Err(Error::Contract(format!(
                "backward on frozen class {}",
                self.label
            )));
        }
        let batch = trace.scores.len();
        if score_grad.len() != batch || kl_weight.len() != batch {
            return Err(Error::dims(
                "ClassVae::backward",
                &[batch],
                &[score_grad.len(), kl_weight.len()],
            ));
        }
        let x = trace.encoder_input();
        let recon = trace.decoder.output();
        let dim = self.input_dim();
        let mut d_recon = Tensor::zeros(&[batch, dim]);
        for (b, &sg) in score_grad.iter().enumerate() {
            let g = 2.0 * sg;
            let (r, xr, out) = (recon.row(b), x.row(b), d_recon.row_mut(b));
            for d in 0..dim {
                out[d] = g * (r[d] - xr[d]);
            }
        }
        let d_z = self.decoder.backward(&trace.decoder, &d_recon)?;

        let l = self.latent_dim;
        let mut d_enc = Tensor::zeros(&[batch, 2 * l]);
        let draw = &trace.draw;
        for (b, &w) in kl_weight.iter().enumerate() {
            let (mu, lv, eps, dz) = (
                draw.mean.row(b),
                draw.log_variance.row(b),
                draw.noise.row(b),
                d_z.row(b),
            );
            let out = d_enc.row_mut(b);
            for k in 0..l {
                let std = (0.5 * lv[k]).exp();
                out[k] = dz[k] + w * mu[k];
                out[l + k] = dz[k] * eps[k] * 0.5 * std + w * 0.5 * (lv[k].exp() - 1.0);
            }
        }
        self.encoder.backward(&trace.encoder, &d_enc)?;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.decoder.zero_grad();
    }

    pub fn param_slots(&mut self) -> Result<Vec<ParamSlot<'_>>> {
        if self.frozen {
            return Err(Error::Contract(format!(
                "parameters of frozen class {} are read-only",
                self.label
            )));
        }
        let mut slots = self.encoder.param_slots("encoder");
        slots.extend(self.decoder.param_slots("decoder"));
        Ok(slots)
    }
}

impl VaeTrace {
    fn encoder_input(&self) -> &Tensor {
        self.encoder.input()
    }
}

/// `sample = mean + exp(0.5 * log_variance) * noise`.
pub fn reparameterize(mean: Tensor, log_variance: Tensor, noise: Tensor) -> Result<LatentDraw> {
    if mean.shape() != log_variance.shape() || mean.shape() != noise.shape() {
        return Err(Error::dims("reparameterize", mean.shape(), noise.shape()));
    }
    let values = mean
        .values()
        .iter()
        .zip(log_variance.values())
        .zip(noise.values())
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect();
    let sample = Tensor::new(mean.shape().to_vec(), values)?;
    Ok(LatentDraw {
        mean,
        log_variance,
        sample,
        noise,
    })
}

/// KL divergence of each row's diagonal Gaussian from N(0, I).
pub fn kl_per_row(mean: &Tensor, log_variance: &Tensor) -> Vec<f64> {
    (0..mean.rows())
        .map(|b| {
            let s: f64 = mean
                .row(b)
                .iter()
                .zip(log_variance.row(b))
                .map(|(&m, &lv)| 1.0 + lv - m * m - lv.exp())
                .sum();
            -0.5 * s
        })
        .collect()
}

/// KL regularizer averaged over the batch.
pub fn kl_loss(draw: &LatentDraw) -> f64 {
    if draw.mean.numel() == 0 {
        return 0.0;
    }
    let rows = kl_per_row(&draw.mean, &draw.log_variance);
    rows.iter().sum::<f64>() / rows.len() as f64
}

pub(crate) fn row_sse(recon: &Tensor, x: &Tensor) -> Vec<f64> {
    (0..x.rows())
        .map(|b| {
            recon
                .row(b)
                .iter()
                .zip(x.row(b))
                .map(|(r, v)| (r - v) * (r - v))
                .sum()
        })
        .collect()
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let values = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(shape.to_vec(), values).expect("shape product matches")
}
