//! Evaluation measures: non-junk accuracy, junk accuracy and junk-detection AUC.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::engine::{predict_episode, LabeledEpisode, ModelParams};
use crate::error::{Error, Result};
use crate::par;

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// A binomial proportion with its normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub value: f64,
    pub half_width: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub successes: u64,
    pub n: u64,
}

impl Proportion {
    /// `None` when `n == 0`.
    pub fn new(successes: u64, n: u64) -> Option<Self> {
        if n == 0 {
            return None;
        }
        let value = successes as f64 / n as f64;
        let half_width = Z_95 * (value * (1.0 - value) / n as f64).sqrt();
        Some(Proportion {
            value,
            half_width,
            ci_low: (value - half_width).max(0.0),
            ci_high: (value + half_width).min(1.0),
            successes,
            n,
        })
    }
}

/// Outcome of one evaluation episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub way: usize,
    /// In `0..=way`; `way` is junk.
    pub true_label: usize,
    pub predicted_label: usize,
    pub junk_score: f64,
}

impl EvalRecord {
    pub fn is_junk(&self) -> bool {
        self.true_label == self.way
    }

    pub fn predicts_junk(&self) -> bool {
        self.predicted_label == self.way
    }

    pub fn correct(&self) -> bool {
        self.true_label == self.predicted_label
    }

    pub fn validate(&self) -> Result<()> {
        if self.true_label > self.way || self.predicted_label > self.way {
            return Err(Error::invalid(format!(
                "labels {} / {} out of range for way {}",
                self.true_label, self.predicted_label, self.way
            )));
        }
        if !self.junk_score.is_finite() {
            return Err(Error::invalid("junk score is not finite"));
        }
        Ok(())
    }
}

/// Which model output ranks queries for the junk AUC.
///
/// The probability is the default. The logit alone is not monotone in it
/// across episodes, since the class logits change from query to query, and a
/// trained junk head often lowers the logit for far queries while the
/// probability still rises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JunkScoreKind {
    /// The raw junk logit.
    Logit,
    /// The softmax probability of the junk outcome.
    #[default]
    Probability,
}

impl std::str::FromStr for JunkScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit" => Ok(JunkScoreKind::Logit),
            "probability" => Ok(JunkScoreKind::Probability),
            other => Err(Error::invalid(format!(
                "unknown junk score {other:?} (expected logit or probability)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub records: u64,
    pub junk_records: u64,
    pub non_junk_records: u64,
    pub non_junk_accuracy: Option<Proportion>,
    pub junk_accuracy: Option<Proportion>,
    pub overall_accuracy: Option<Proportion>,
    pub auc: Option<f64>,
}

/// Accuracy per stratum plus the junk AUC. Empty strata and single-class
/// inputs leave the matching fields `None`.
pub fn accuracy_report(records: &[EvalRecord]) -> Result<MetricsReport> {
    let (mut junk, mut junk_hit, mut other, mut other_hit) = (0u64, 0u64, 0u64, 0u64);
    for r in records {
        r.validate()?;
        if r.is_junk() {
            junk += 1;
            junk_hit += u64::from(r.predicts_junk());
        } else {
            other += 1;
            other_hit += u64::from(r.correct());
        }
    }
    let auc = match auc(records) {
        Ok(a) => Some(a),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        records: junk + other,
        junk_records: junk,
        non_junk_records: other,
        non_junk_accuracy: Proportion::new(other_hit, other),
        junk_accuracy: Proportion::new(junk_hit, junk),
        overall_accuracy: Proportion::new(junk_hit + other_hit, junk + other),
        auc,
    })
}

/// Junk-detection AUC of the records' junk scores.
pub fn auc(records: &[EvalRecord]) -> Result<f64> {
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for r in records {
        r.validate()?;
        if r.is_junk() {
            positives.push(r.junk_score);
        } else {
            negatives.push(r.junk_score);
        }
    }
    auc_from_scores(&positives, &negatives)
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half. Computed from mid-ranks of the pooled scores.
pub fn auc_from_scores(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Undefined(format!(
            "AUC needs both classes, got {} positive and {} negative scores",
            positives.len(),
            negatives.len()
        )));
    }
    if positives.iter().chain(negatives).any(|s| s.is_nan()) {
        return Err(Error::invalid("AUC scores contain NaN"));
    }
    let mut pooled: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));

    // Sum of positive ranks, doubled so tied mid-ranks stay integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // ranks i+1..=j share the mid-rank (i+1+j)/2
        let pos_in_group = pooled[i..j].iter().filter(|p| p.1).count() as u128;
        twice_rank_sum += pos_in_group * (i as u128 + 1 + j as u128);
        i = j;
    }
    let n_pos = positives.len() as u128;
    let n_neg = negatives.len() as u128;
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Runs the model on every episode, in parallel, keeping input order.
pub fn evaluate(params: &ModelParams, episodes: &[LabeledEpisode], score: JunkScoreKind) -> Result<Vec<EvalRecord>> {
    par::try_map(episodes, |ep| {
        let p = predict_episode(params, ep)?;
        Ok(EvalRecord {
            way: ep.way(),
            true_label: ep.label,
            predicted_label: p.predicted_label,
            junk_score: match score {
                JunkScoreKind::Logit => p.junk_score,
                JunkScoreKind::Probability => p.junk_probability(),
            },
        })
    })
}
