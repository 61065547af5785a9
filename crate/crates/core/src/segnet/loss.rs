//! Segmentation loss: pixel cross-entropy, soft foreground Dice and the
//! weighted shape-prior terms.

use super::layers::softmax_channels;
use super::model::TrainConfig;
use super::prior::PriorTerms;
use crate::study_io::class;

/// Smoothing added to numerator and denominator of the soft Dice.
pub const DICE_SMOOTHING: f64 = 1.0;

/// Mean pixel cross-entropy of `[classes][pixels]` probabilities.
pub fn cross_entropy(probs: &[f64], labels: &[u8]) -> f64 {
    let n = labels.len();
    let mut ce = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let p = probs[l as usize * n + i];
        ce -= p.max(f64::MIN_POSITIVE).ln();
    }
    ce / n as f64
}

/// Soft Dice averaged over the foreground classes.
pub fn soft_dice(probs: &[f64], labels: &[u8]) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for c in 1..class::COUNT {
        let (inter, sum) = dice_sums(&probs[c * n..(c + 1) * n], labels, c as u8);
        total += (2.0 * inter + DICE_SMOOTHING) / (sum + DICE_SMOOTHING);
    }
    total / (class::COUNT - 1) as f64
}

fn dice_sums(p: &[f64], labels: &[u8], c: u8) -> (f64, f64) {
    let mut inter = 0.0;
    let mut sum = 0.0;
    for (pv, &l) in p.iter().zip(labels) {
        sum += pv;
        if l == c {
            inter += pv;
            sum += 1.0;
        }
    }
    (inter, sum)
}

/// Weighted loss from logits, labels and the already evaluated prior terms.
pub fn total_loss(logits: &[f64], labels: &[u8], prior: PriorTerms, config: &TrainConfig) -> f64 {
    let probs = softmax_channels(logits, class::COUNT);
    loss_from_probs(&probs, labels, prior, config)
}

pub(crate) fn loss_from_probs(
    probs: &[f64],
    labels: &[u8],
    prior: PriorTerms,
    config: &TrainConfig,
) -> f64 {
    let mut loss = config.w_ce * cross_entropy(probs, labels)
        + config.w_dice * (1.0 - soft_dice(probs, labels));
    if config.lambda_prior > 0.0 {
        loss += config.lambda_prior * prior.total();
    }
    loss
}

/// Gradient of the CE and Dice terms with respect to the probabilities.
pub(crate) fn d_probs(probs: &[f64], labels: &[u8], config: &TrainConfig) -> Vec<f64> {
    let n = labels.len();
    let mut d = vec![0.0; probs.len()];
    let ce = config.w_ce / n as f64;
    for (i, &l) in labels.iter().enumerate() {
        let idx = l as usize * n + i;
        d[idx] -= ce / probs[idx].max(f64::MIN_POSITIVE);
    }
    let k = config.w_dice / (class::COUNT - 1) as f64;
    for c in 1..class::COUNT {
        let (inter, sum) = dice_sums(&probs[c * n..(c + 1) * n], labels, c as u8);
        let num = 2.0 * inter + DICE_SMOOTHING;
        let den = sum + DICE_SMOOTHING;
        for (i, &l) in labels.iter().enumerate() {
            let g = if l == c as u8 { 1.0 } else { 0.0 };
            d[c * n + i] -= k * (2.0 * g * den - num) / (den * den);
        }
    }
    d
}

/// Chains `dL/dp` through the per-pixel softmax.
pub(crate) fn softmax_backward(probs: &[f64], d_probs: &[f64], classes: usize) -> Vec<f64> {
    let n = probs.len() / classes;
    let mut dz = vec![0.0; probs.len()];
    for i in 0..n {
        let dot: f64 = (0..classes).map(|c| probs[c * n + i] * d_probs[c * n + i]).sum();
        for c in 0..classes {
            let j = c * n + i;
            dz[j] = probs[j] * (d_probs[j] - dot);
        }
    }
    dz
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_prediction_has_ln4_cross_entropy() {
        let labels = [0u8, 1, 2, 3, 3, 0];
        let probs = vec![0.25; 24];
        assert!((cross_entropy(&probs, &labels) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let labels = [0u8, 1, 2, 3, 1, 2, 3, 3];
        let n = labels.len();
        let mut logits = vec![-40.0; 4 * n];
        for (i, &l) in labels.iter().enumerate() {
            logits[l as usize * n + i] = 40.0;
        }
        let config = TrainConfig {
            lambda_prior: 0.0,
            ..TrainConfig::default()
        };
        let zero = PriorTerms {
            reconstruction: 0.0,
            kl: 0.0,
        };
        let loss = total_loss(&logits, &labels, zero, &config);
        assert!(loss.abs() < 1e-12, "{loss}");
    }
}
