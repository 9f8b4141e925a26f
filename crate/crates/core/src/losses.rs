//! Hinge losses on anomaly scores and the combined training objective.
//!
//! Scores are summed squared reconstruction errors, so `r_intra` and `r_inter`
//! are in the same units. Every hinge uses derivative 0 at its kink.

use crate::error::{Error, Result};
use crate::numcore::{Activation, Tensor};

/// Training and architecture settings shared by every class VAE.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Upper bound for positive-sample scores.
    pub r_intra: f64,
    /// Lower bound for negative-sample scores; must exceed `r_intra`.
    pub r_inter: f64,
    /// Weight of the classifier-contrastive term.
    pub lambda1: f64,
    /// Weight of the inter-class term.
    pub lambda2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub latent_dim: usize,
    pub hidden_widths: Vec<usize>,
    /// Pseudo negatives drawn per prior-task class per epoch.
    pub pseudo_per_old_class: usize,
    /// Sigmoid for pixel inputs in `[0, 1]`, identity for unbounded features.
    pub decoder_output: Activation,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            r_intra: 10.0,
            r_inter: 50.0,
            lambda1: 1.0,
            lambda2: 1.0,
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            latent_dim: 8,
            hidden_widths: vec![256, 64],
            pseudo_per_old_class: 64,
            decoder_output: Activation::Sigmoid,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("r_intra", self.r_intra),
            ("r_inter", self.r_inter),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
        ];
        for (name, v) in finite {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.r_inter <= self.r_intra {
            return Err(Error::Config(format!(
                "r_inter ({}) must be greater than r_intra ({})",
                self.r_inter, self.r_intra
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.latent_dim == 0 {
            return Err(Error::Config(
                "epochs, batch_size and latent_dim must be positive".into(),
            ));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::Config(format!(
                "hidden_widths must be non-empty and positive, got {:?}",
                self.hidden_widths
            )));
        }
        if self.decoder_output == Activation::Relu {
            return Err(Error::Config(
                "decoder output must be sigmoid or identity".into(),
            ));
        }
        Ok(())
    }
}

/// Per-batch loss terms and their weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub intra: f64,
    pub cc: f64,
    pub inter: f64,
    pub kl: f64,
    pub total: f64,
}

/// Mean of `max(0, score - r_intra)` over positive-sample scores.
pub fn intra_loss(scores_pos: &[f64], r_intra: f64) -> Result<f64> {
    if scores_pos.is_empty() {
        return Err(Error::Contract(
            "intra_loss on an empty positive batch".into(),
        ));
    }
    let sum: f64 = scores_pos.iter().map(|&s| (s - r_intra).max(0.0)).sum();
    Ok(sum / scores_pos.len() as f64)
}

/// d(intra_loss)/d(score) for each positive sample.
pub fn intra_grad(scores_pos: &[f64], r_intra: f64) -> Vec<f64> {
    let w = 1.0 / scores_pos.len().max(1) as f64;
    scores_pos
        .iter()
        .map(|&s| if s - r_intra > 0.0 { w } else { 0.0 })
        .collect()
}

fn check_cc_shapes(scores_new: &[f64], scores_old: &Tensor) -> Result<usize> {
    if scores_old.numel() == 0 {
        return Ok(0);
    }
    let n_old = scores_old.cols();
    if scores_old.rows() != scores_new.len() {
        return Err(Error::dims(
            "cc_loss",
            &[scores_new.len()],
            scores_old.shape(),
        ));
    }
    Ok(n_old)
}

/// Classifier-contrastive loss: mean over positives of
/// `(1 / n_old) * sum_j max(0, score_new - score_old_j)`.
///
/// `scores_old` is `(batch, n_old)`; an empty matrix means no predecessors.
pub fn cc_loss(scores_new: &[f64], scores_old: &Tensor) -> Result<f64> {
    let n_old = check_cc_shapes(scores_new, scores_old)?;
    if n_old == 0 || scores_new.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (b, &s) in scores_new.iter().enumerate() {
        let row: f64 = scores_old.row(b).iter().map(|&o| (s - o).max(0.0)).sum();
        sum += row / n_old as f64;
    }
    Ok(sum / scores_new.len() as f64)
}

pub fn cc_grad(scores_new: &[f64], scores_old: &Tensor) -> Result<Vec<f64>> {
    let n_old = check_cc_shapes(scores_new, scores_old)?;
    if n_old == 0 || scores_new.is_empty() {
        return Ok(vec![0.0; scores_new.len()]);
    }
    let w = 1.0 / (scores_new.len() * n_old) as f64;
    Ok(scores_new
        .iter()
        .enumerate()
        .map(|(b, &s)| {
            let active = scores_old.row(b).iter().filter(|&&o| s - o > 0.0).count();
            w * active as f64
        })
        .collect())
}

/// Mean of `max(0, r_inter - score)` over negative-sample scores; 0 when empty.
pub fn inter_loss(scores_neg: &[f64], r_inter: f64) -> f64 {
    if scores_neg.is_empty() {
        return 0.0;
    }
    let sum: f64 = scores_neg.iter().map(|&s| (r_inter - s).max(0.0)).sum();
    sum / scores_neg.len() as f64
}

pub fn inter_grad(scores_neg: &[f64], r_inter: f64) -> Vec<f64> {
    let w = 1.0 / scores_neg.len().max(1) as f64;
    scores_neg
        .iter()
        .map(|&s| if r_inter - s > 0.0 { -w } else { 0.0 })
        .collect()
}

/// `intra + lambda1 * cc + lambda2 * inter + kl`.
pub fn total_loss(
    intra: f64,
    cc: f64,
    inter: f64,
    kl: f64,
    hp: &HyperParams,
) -> Result<LossBreakdown> {
    for (name, v) in [("intra", intra), ("cc", cc), ("inter", inter), ("kl", kl)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss term {name} = {v}")));
        }
    }
    Ok(LossBreakdown {
        intra,
        cc,
        inter,
        kl,
        total: intra + hp.lambda1 * cc + hp.lambda2 * inter + kl,
    })
}
