//! Softmax and the two training losses: cross-entropy against a hard class
//! and temperature-scaled KL divergence against a target distribution.

use serde::{Deserialize, Serialize};

use crate::data::{validate_distribution, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossKind {
    /// Cross-entropy; labels must be hard.
    #[default]
    Hard,
    /// `KL(target || softmax(logits / T))`; hard labels act as one-hot targets.
    Soft { temperature: f32 },
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut out: Vec<f32> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f32 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

pub fn log_softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f32>().ln();
    logits.iter().map(|z| z - max - log_sum).collect()
}

/// Softmax of `logits / temperature`.
pub fn softmax_with_temperature(logits: &[f32], temperature: f32) -> Vec<f32> {
    let scaled: Vec<f32> = logits.iter().map(|z| z / temperature).collect();
    softmax(&scaled)
}

/// `-ln softmax(logits)[label]`.
pub fn loss_hard(logits: &[f32], label: usize) -> Result<f32> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            index: 0,
            label,
            classes: logits.len(),
        });
    }
    Ok(-log_softmax(logits)[label])
}

/// `KL(target || softmax(logits / temperature))`.
pub fn loss_soft(logits: &[f32], target: &[f32], temperature: f32) -> Result<f32> {
    check_temperature(temperature)?;
    validate_distribution(target, logits.len())?;
    Ok(soft_terms(logits, target, temperature).0)
}

fn check_temperature(temperature: f32) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "temperature must be positive, got {temperature}"
        )))
    }
}

fn soft_terms(logits: &[f32], target: &[f32], temperature: f32) -> (f32, Vec<f32>) {
    let scaled: Vec<f32> = logits.iter().map(|z| z / temperature).collect();
    let log_q = log_softmax(&scaled);
    let loss = target
        .iter()
        .zip(&log_q)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, lq)| t * (t.ln() - lq))
        .sum::<f32>()
        .max(0.0);
    let grad = log_q
        .iter()
        .zip(target)
        .map(|(lq, t)| (lq.exp() - t) / temperature)
        .collect();
    (loss, grad)
}

/// Loss for one instance and its gradient with respect to the logits.
pub fn loss_and_grad(logits: &[f32], label: &Label, kind: LossKind) -> Result<(f32, Vec<f32>)> {
    let classes = logits.len();
    match (kind, label) {
        (LossKind::Hard, Label::Hard(c)) => {
            let loss = loss_hard(logits, *c)?;
            let mut grad = softmax(logits);
            grad[*c] -= 1.0;
            Ok((loss, grad))
        }
        (LossKind::Hard, Label::Soft(_)) => Err(Error::InvalidDistribution(
            "soft label used with hard-label loss".into(),
        )),
        (LossKind::Soft { temperature }, Label::Hard(c)) => {
            check_temperature(temperature)?;
            if *c >= classes {
                return Err(Error::LabelOutOfRange {
                    index: 0,
                    label: *c,
                    classes,
                });
            }
            let mut target = vec![0.0; classes];
            target[*c] = 1.0;
            Ok(soft_terms(logits, &target, temperature))
        }
        (LossKind::Soft { temperature }, Label::Soft(target)) => {
            check_temperature(temperature)?;
            validate_distribution(target, classes)?;
            Ok(soft_terms(logits, target, temperature))
        }
    }
}
