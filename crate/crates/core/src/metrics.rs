//! AUC, temporal IoU, AP@IoU, AR@N and the composite challenge score.

use std::cmp::Ordering;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::localization::Segment;

pub const AP_THRESHOLDS: [f64; 4] = [0.5, 0.75, 0.9, 0.95];
pub const AR_COUNTS: [usize; 5] = [50, 30, 20, 10, 5];

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("AUC needs both classes; got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("no ground-truth segments")]
    NoGroundTruth,
    #[error("non-finite score")]
    NonFinite,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
}

/// Probability that a positive outscores a negative, ties counting half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let positives = labels.iter().filter(|l| **l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the Mann-Whitney U, kept integral so ties are exact
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        twice_u += p * (2 * neg_below + n);
        neg_below += n;
        i = j;
    }
    Ok(twice_u as f64 / (2 * positives as u128 * negatives as u128) as f64)
}

pub fn temporal_iou(a: &Segment, b: &Segment) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.duration() + b.duration() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Predicted and ground-truth segments of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub video_id: String,
    pub predictions: Vec<Segment>,
    pub truth: Vec<Segment>,
}

fn by_score_desc(a: &Segment, b: &Segment) -> Ordering {
    b.score.total_cmp(&a.score).then(a.start.total_cmp(&b.start))
}

/// Matches predictions in the given order, each to the unmatched ground
/// truth of highest IoU (lowest index on ties) at or above `threshold`.
fn greedy_match(predictions: &[&Segment], truth: &[Segment], threshold: f64) -> Vec<bool> {
    let mut used = vec![false; truth.len()];
    predictions
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in truth.iter().enumerate() {
                if used[g] {
                    continue;
                }
                let iou = temporal_iou(p, gt);
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, _)) => {
                    used[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Area under the precision envelope for a ranked TP/FP list.
pub fn average_precision(hits: &[bool], total_truth: usize) -> f64 {
    if total_truth == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &h) in hits.iter().enumerate() {
        if h {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    hits.iter()
        .zip(&precision)
        .filter(|(h, _)| **h)
        .map(|(_, p)| p)
        .sum::<f64>()
        / total_truth as f64
}

/// Predictions pooled across videos and ranked by score, ties broken by
/// video id then start time.
pub fn ap_at_iou(pairs: &[EvalPair], threshold: f64) -> Result<f64, MetricsError> {
    let total_truth: usize = pairs.iter().map(|p| p.truth.len()).sum();
    if total_truth == 0 {
        return Err(MetricsError::NoGroundTruth);
    }
    let mut pooled: Vec<(usize, &Segment)> = pairs
        .iter()
        .enumerate()
        .flat_map(|(v, p)| p.predictions.iter().map(move |s| (v, s)))
        .collect();
    pooled.sort_by(|(va, a), (vb, b)| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| pairs[*va].video_id.cmp(&pairs[*vb].video_id))
            .then(a.start.total_cmp(&b.start))
    });
    let mut used: Vec<Vec<bool>> = pairs.iter().map(|p| vec![false; p.truth.len()]).collect();
    let hits: Vec<bool> = pooled
        .iter()
        .map(|(v, p)| {
            let truth = &pairs[*v].truth;
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in truth.iter().enumerate() {
                if used[*v][g] {
                    continue;
                }
                let iou = temporal_iou(p, gt);
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                used[*v][g] = true;
                true
            } else {
                false
            }
        })
        .collect();
    Ok(average_precision(&hits, total_truth))
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn ar_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Recall of one video's ground truth by its top-`n` predictions, averaged
/// over the AR IoU thresholds.
pub fn video_recall_at_n(pair: &EvalPair, n: usize) -> f64 {
    let mut preds: Vec<&Segment> = pair.predictions.iter().collect();
    preds.sort_by(|a, b| by_score_desc(a, b));
    preds.truncate(n);
    let thresholds = ar_thresholds();
    thresholds
        .iter()
        .map(|&t| {
            let matched = greedy_match(&preds, &pair.truth, t).iter().filter(|m| **m).count();
            matched as f64 / pair.truth.len() as f64
        })
        .sum::<f64>()
        / thresholds.len() as f64
}

/// Mean over videos with ground truth of their threshold-averaged recall.
pub fn ar_at_n(pairs: &[EvalPair], n: usize) -> Result<f64, MetricsError> {
    let with_truth: Vec<&EvalPair> = pairs.iter().filter(|p| !p.truth.is_empty()).collect();
    if with_truth.is_empty() {
        return Err(MetricsError::NoGroundTruth);
    }
    Ok(with_truth.iter().map(|p| video_recall_at_n(p, n)).sum::<f64>() / with_truth.len() as f64)
}

/// AP at each of [`AP_THRESHOLDS`] and AR at each of [`AR_COUNTS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponents {
    pub ap: [f64; 4],
    pub ar: [f64; 5],
}

impl ScoreComponents {
    pub fn compute(pairs: &[EvalPair]) -> Result<Self, MetricsError> {
        let mut ap = [0.0; 4];
        for (v, t) in ap.iter_mut().zip(AP_THRESHOLDS) {
            *v = ap_at_iou(pairs, t)?;
        }
        let mut ar = [0.0; 5];
        for (v, n) in ar.iter_mut().zip(AR_COUNTS) {
            *v = ar_at_n(pairs, n)?;
        }
        Ok(Self { ap, ar })
    }

    /// `(1/8) sum AP + (1/10) sum AR`.
    pub fn score(&self) -> f64 {
        self.ap.iter().sum::<f64>() / 8.0 + self.ar.iter().sum::<f64>() / 10.0
    }
}

pub fn challenge_score(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    Ok(ScoreComponents::compute(pairs)?.score())
}

/// Metrics JSON written by the evaluate command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub ap: IndexMap<String, f64>,
    pub ar: IndexMap<String, f64>,
    pub score: f64,
}

impl MetricsReport {
    pub fn from_components(c: &ScoreComponents, auc: Option<f64>) -> Self {
        Self {
            auc,
            ap: AP_THRESHOLDS.iter().zip(c.ap).map(|(t, v)| (format!("{t}"), v)).collect(),
            ar: AR_COUNTS.iter().zip(c.ar).map(|(n, v)| (n.to_string(), v)).collect(),
            score: c.score(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: &str, preds: &[(f64, f64, f64)], truth: &[(f64, f64)]) -> EvalPair {
        EvalPair {
            video_id: id.into(),
            predictions: preds.iter().map(|&(s, a, b)| Segment::new(a, b, s)).collect(),
            truth: truth.iter().map(|&(a, b)| Segment::span(a, b)).collect(),
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(auc(&[0.3; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.3, 0.2], &[true, true]), Err(MetricsError::SingleClass { .. })));
    }

    #[test]
    fn iou_examples() {
        let a = Segment::span(0.0, 2.0);
        assert_eq!(temporal_iou(&a, &a), 1.0);
        assert!((temporal_iou(&a, &Segment::span(1.0, 3.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(temporal_iou(&a, &Segment::span(2.0, 3.0)), 0.0);
    }

    #[test]
    fn perfect_and_empty_detectors() {
        let truth = [(0.0, 1.0), (2.0, 2.5)];
        let perfect = [pair("a", &[(1.0, 0.0, 1.0), (1.0, 2.0, 2.5)], &truth), pair("b", &[], &[])];
        let c = ScoreComponents::compute(&perfect).unwrap();
        assert_eq!(c.ap, [1.0; 4]);
        assert_eq!(c.ar, [1.0; 5]);
        assert_eq!(c.score(), 1.0);
        let empty = [pair("a", &[], &truth)];
        let c = ScoreComponents::compute(&empty).unwrap();
        assert_eq!(c.score(), 0.0);
        assert_eq!(ar_at_n(&[pair("b", &[], &[])], 5), Err(MetricsError::NoGroundTruth));
    }

    #[test]
    fn composite_from_reported_components() {
        let c = ScoreComponents {
            ap: [0.5117, 0.4017, 0.1701, 0.0416],
            ar: [0.4259, 0.4259, 0.4259, 0.4259, 0.4258],
        };
        assert!((c.score() - 0.3536).abs() < 5e-5);
    }

    #[test]
    fn envelope_interpolation() {
        // ranks: TP FP TP with 2 truths -> precision 1, 1/2, 2/3; envelope 1, 2/3, 2/3
        let ap = average_precision(&[true, false, true], 2);
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn thresholds_are_exact_decimals() {
        let t = ar_thresholds();
        assert_eq!(t[0], 0.5);
        assert_eq!(t[5], 0.75);
        assert_eq!(t[9], 0.95);
    }
}
