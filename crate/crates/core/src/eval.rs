//! Evaluation: accuracies, the entropy-threshold membership attack,
//! KL-naturalness of an unlearning set, and gaps to the retrained model.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, LabeledInstance};
use crate::error::{Error, Result};
use crate::nn::Model;

/// Accuracy in percent. Soft labels are scored against their argmax.
pub fn accuracy(model: &Model, instances: &[LabeledInstance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for inst in instances {
        if model.predict(inst.pixels())? == inst.label.class() {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / instances.len() as f64)
}

fn softmax64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&z| (z as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Shannon entropy in nats, clamped to `[0, ln K]`.
pub fn entropy(probabilities: &[f64]) -> f64 {
    let h: f64 = probabilities
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.clamp(0.0, (probabilities.len() as f64).ln())
}

pub fn prediction_entropy(model: &Model, x: &[f32]) -> Result<f64> {
    Ok(entropy(&softmax64(&model.logits(x)?)))
}

pub fn entropies(model: &Model, instances: &[LabeledInstance]) -> Result<Vec<f64>> {
    instances
        .iter()
        .map(|inst| prediction_entropy(model, inst.pixels()))
        .collect()
}

/// Predicts "member" when the prediction entropy is below the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiaClassifier {
    pub threshold: f64,
}

impl MiaClassifier {
    pub fn is_member(&self, entropy: f64) -> bool {
        entropy < self.threshold
    }

    pub fn balanced_accuracy(&self, members: &[f64], non_members: &[f64]) -> f64 {
        let tpr = members.iter().filter(|&&e| self.is_member(e)).count() as f64
            / members.len() as f64;
        let tnr = non_members.iter().filter(|&&e| !self.is_member(e)).count() as f64
            / non_members.len() as f64;
        0.5 * (tpr + tnr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiaFit {
    pub classifier: MiaClassifier,
    pub balanced_accuracy: f64,
}

/// Threshold maximizing balanced accuracy. Candidates are the midpoints
/// between adjacent distinct entropies plus the two infinite thresholds;
/// ties go to the smallest threshold.
pub fn fit_threshold(members: &[f64], non_members: &[f64]) -> Result<MiaFit> {
    if members.is_empty() || non_members.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut m = members.to_vec();
    let mut nm = non_members.to_vec();
    m.sort_by(f64::total_cmp);
    nm.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = m.iter().chain(&nm).copied().collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let mut candidates = Vec::with_capacity(distinct.len() + 1);
    candidates.push(f64::NEG_INFINITY);
    candidates.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(f64::INFINITY);

    let score = |tau: f64| {
        // Same arithmetic as MiaClassifier::balanced_accuracy, so the
        // reported score matches the classifier bit for bit.
        let tp = m.partition_point(|&e| e < tau);
        let tn = nm.len() - nm.partition_point(|&e| e < tau);
        0.5 * (tp as f64 / m.len() as f64 + tn as f64 / nm.len() as f64)
    };
    let mut best = MiaFit {
        classifier: MiaClassifier {
            threshold: candidates[0],
        },
        balanced_accuracy: score(candidates[0]),
    };
    for &tau in &candidates[1..] {
        let ba = score(tau);
        if ba > best.balanced_accuracy {
            best = MiaFit {
                classifier: MiaClassifier { threshold: tau },
                balanced_accuracy: ba,
            };
        }
    }
    Ok(best)
}

/// Fit on the model's entropies, with remaining data as members and test
/// data as non-members.
pub fn mia_fit(model: &Model, remaining: &[LabeledInstance], test: &[LabeledInstance]) -> Result<MiaFit> {
    fit_threshold(&entropies(model, remaining)?, &entropies(model, test)?)
}

/// Percentage of forgetting samples the classifier calls members.
pub fn mia_ratio(classifier: &MiaClassifier, model: &Model, forget: &[LabeledInstance]) -> Result<f64> {
    if forget.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let members = entropies(model, forget)?
        .into_iter()
        .filter(|&e| classifier.is_member(e))
        .count();
    Ok(100.0 * members as f64 / forget.len() as f64)
}

/// Smoothing mass added to every class of a target before normalizing.
pub const KL_SMOOTHING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlOrder {
    /// `KL(model prediction || label)`.
    #[default]
    ModelToLabel,
    /// `KL(label || model prediction)`.
    LabelToModel,
}

fn smoothed_target(label: &Label, classes: usize) -> Result<Vec<f64>> {
    label.validate(classes)?;
    let norm = 1.0 + classes as f64 * KL_SMOOTHING;
    Ok(match label {
        Label::Hard(c) => (0..classes)
            .map(|k| (if k == *c { 1.0 } else { 0.0 } + KL_SMOOTHING) / norm)
            .collect(),
        Label::Soft(p) => p.iter().map(|&v| (v as f64 + KL_SMOOTHING) / norm).collect(),
    })
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pk, _)| **pk > 0.0)
        .map(|(pk, qk)| pk * (pk.ln() - qk.max(f64::MIN_POSITIVE).ln()))
        .sum::<f64>()
        .max(0.0)
}

/// Mean KL divergence between the retrained model's predictions on the
/// unlearning instances and their assigned labels.
pub fn kl_avg(retrained: &Model, unlearning: &[LabeledInstance], order: KlOrder) -> Result<f64> {
    if unlearning.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = retrained.class_count();
    let mut total = 0.0;
    for inst in unlearning {
        let p = softmax64(&retrained.logits(inst.pixels())?);
        let q = smoothed_target(&inst.label, classes)?;
        total += match order {
            KlOrder::ModelToLabel => kl(&p, &q),
            KlOrder::LabelToModel => kl(&q, &p),
        };
    }
    Ok(total / unlearning.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "TA")]
    TestAccuracy,
    #[serde(rename = "RA")]
    RemainingAccuracy,
    #[serde(rename = "FA")]
    ForgetAccuracy,
    #[serde(rename = "FATrain")]
    ForgetTrainAccuracy,
    #[serde(rename = "FATest")]
    ForgetTestAccuracy,
    #[serde(rename = "MIA")]
    Mia,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::TestAccuracy => "TA",
            Metric::RemainingAccuracy => "RA",
            Metric::ForgetAccuracy => "FA",
            Metric::ForgetTrainAccuracy => "FATrain",
            Metric::ForgetTestAccuracy => "FATest",
            Metric::Mia => "MIA",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    /// Percentages, in reporting order.
    pub metrics: Vec<(Metric, f64)>,
    /// Nats; `None` when no unlearning set applies.
    pub kl_avg: Option<f64>,
}

impl MetricsReport {
    pub fn new(metrics: Vec<(Metric, f64)>) -> Self {
        Self {
            metrics,
            kl_avg: None,
        }
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.metrics
            .iter()
            .find(|(m, _)| *m == metric)
            .map(|(_, v)| *v)
    }
}

/// Absolute per-metric differences.
pub fn gaps(report: &MetricsReport, reference: &MetricsReport) -> Result<Vec<(Metric, f64)>> {
    let names = |r: &MetricsReport| r.metrics.iter().map(|(m, _)| *m).collect::<Vec<_>>();
    let (mut a, mut b) = (names(report), names(reference));
    a.sort();
    b.sort();
    if a != b || a.is_empty() {
        return Err(Error::MetricMismatch(format!("{a:?} vs {b:?}")));
    }
    Ok(report
        .metrics
        .iter()
        .map(|(m, v)| (*m, (v - reference.get(*m).expect("same metric set")).abs()))
        .collect())
}

/// Mean absolute metric difference, in percentage points.
pub fn avg_gap(report: &MetricsReport, reference: &MetricsReport) -> Result<f64> {
    let g = gaps(report, reference)?;
    Ok(g.iter().map(|(_, v)| v).sum::<f64>() / g.len() as f64)
}

/// Mean of already-computed gaps.
pub fn mean_gap(gaps: &[f64]) -> f64 {
    gaps.iter().sum::<f64>() / gaps.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_left: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,count\n");
        for (l, c) in self.bin_left.iter().zip(&self.counts) {
            out.push_str(&format!("{l:.6},{c}\n"));
        }
        out
    }
}

/// Equal-width histogram of prediction entropies over `[0, ln K]`.
pub fn entropy_histogram(model: &Model, instances: &[LabeledInstance], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    let max = (model.class_count() as f64).ln();
    let width = max / bins as f64;
    let mut counts = vec![0; bins];
    for e in entropies(model, instances)? {
        let bin = if width > 0.0 {
            ((e / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    Ok(Histogram {
        bin_left: (0..bins).map(|b| b as f64 * width).collect(),
        counts,
    })
}

/// The sets a report is computed over. `test_forget` is set for class-wise
/// unlearning and holds the test instances of the forgotten class, while
/// `test` then holds the other test instances.
#[derive(Debug, Clone, Copy)]
pub struct EvalSplits<'a> {
    pub forget: &'a Dataset,
    pub remaining: &'a Dataset,
    pub test: &'a Dataset,
    pub test_forget: Option<&'a Dataset>,
}

/// TA, RA, FA (or FATrain and FATest) and the MIA ratio of one model.
pub fn evaluate(model: &Model, splits: &EvalSplits<'_>) -> Result<MetricsReport> {
    let fit = mia_fit(model, &splits.remaining.instances, &splits.test.instances)?;
    let ta = accuracy(model, &splits.test.instances)?;
    let ra = accuracy(model, &splits.remaining.instances)?;
    let fa = accuracy(model, &splits.forget.instances)?;
    let mia = mia_ratio(&fit.classifier, model, &splits.forget.instances)?;
    let metrics = match splits.test_forget {
        None => vec![
            (Metric::TestAccuracy, ta),
            (Metric::RemainingAccuracy, ra),
            (Metric::ForgetAccuracy, fa),
            (Metric::Mia, mia),
        ],
        Some(test_forget) => vec![
            (Metric::TestAccuracy, ta),
            (Metric::RemainingAccuracy, ra),
            (Metric::ForgetTrainAccuracy, fa),
            (Metric::ForgetTestAccuracy, accuracy(model, &test_forget.instances)?),
            (Metric::Mia, mia),
        ],
    };
    Ok(MetricsReport::new(metrics))
}
