//! Detection matching, average precision and the confusion matrix.

use serde::{Deserialize, Serialize};

use crate::detector::Detection;
use crate::geometry::{iou, BBox};

use super::{EvalError, Result};

/// Ground truth of one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameTruth {
    pub boxes: Vec<BBox>,
    pub classes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetOutcome {
    /// Matched the ground-truth box with this index in its frame.
    TruePositive(usize),
    FalsePositive,
}

/// Outcome per detection and matched flag per ground-truth box, both
/// indexed `[frame][item]` like the inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub detections: Vec<Vec<DetOutcome>>,
    pub gt_matched: Vec<Vec<bool>>,
}

/// Detection indices of one frame by descending score, ties by index.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Greedy matching: in descending score order each detection takes the
/// unmatched same-class box with the highest IoU (lowest index on ties)
/// if that IoU reaches `iou_threshold`; otherwise it is a false positive.
pub fn match_detections(
    detections: &[Vec<Detection>],
    truths: &[FrameTruth],
    iou_threshold: f64,
) -> Result<MatchResult> {
    if detections.len() != truths.len() {
        return Err(EvalError::Config(format!(
            "{} detection frames but {} ground-truth frames",
            detections.len(),
            truths.len()
        )));
    }
    let mut out = MatchResult {
        detections: Vec::with_capacity(detections.len()),
        gt_matched: Vec::with_capacity(truths.len()),
    };
    for (dets, gt) in detections.iter().zip(truths) {
        let mut matched = vec![false; gt.boxes.len()];
        let mut outcome = vec![DetOutcome::FalsePositive; dets.len()];
        for d in score_order(dets) {
            let mut best: Option<(usize, f64)> = None;
            for (g, b) in gt.boxes.iter().enumerate() {
                if matched[g] || gt.classes[g] != dets[d].class_id {
                    continue;
                }
                let v = iou(&dets[d].bbox, b);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            if let Some((g, v)) = best {
                if v >= iou_threshold {
                    matched[g] = true;
                    outcome[d] = DetOutcome::TruePositive(g);
                }
            }
        }
        out.detections.push(outcome);
        out.gt_matched.push(matched);
    }
    Ok(out)
}

/// A detection reduced to what the PR curve needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredOutcome {
    pub score: f64,
    pub frame: usize,
    pub index: usize,
    pub true_positive: bool,
}

/// Sorts by descending score, then ascending frame, then ascending index.
pub fn sort_outcomes(outcomes: &mut [ScoredOutcome]) {
    outcomes.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.frame.cmp(&b.frame))
            .then(a.index.cmp(&b.index))
    });
}

/// One point of a precision/recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    /// Score of the detection that produced this point (`None` for the origin).
    pub score: Option<f64>,
}

/// Curve starting at (recall 0, precision 1) with one point per detection.
pub fn pr_curve(outcomes: &[ScoredOutcome], gt_count: usize) -> Vec<PrPoint> {
    let mut sorted = outcomes.to_vec();
    sort_outcomes(&mut sorted);
    let mut points = Vec::with_capacity(sorted.len() + 1);
    points.push(PrPoint {
        recall: 0.0,
        precision: 1.0,
        score: None,
    });
    let (mut tp, mut fp) = (0usize, 0usize);
    for o in &sorted {
        if o.true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push(PrPoint {
            recall: if gt_count == 0 { 0.0 } else { tp as f64 / gt_count as f64 },
            precision: tp as f64 / (tp + fp) as f64,
            score: Some(o.score),
        });
    }
    points
}

/// All-points interpolated AP: `Σ (r_k − r_{k−1}) · max_{j≥k} p_j`.
/// `None` when the class has no ground truth.
pub fn average_precision(outcomes: &[ScoredOutcome], gt_count: usize) -> Option<f64> {
    if gt_count == 0 {
        return None;
    }
    let curve = pr_curve(outcomes, gt_count);
    // Envelope: running precision maximum from the tail.
    let mut envelope = vec![0.0f64; curve.len()];
    let mut best = 0.0f64;
    for k in (1..curve.len()).rev() {
        best = best.max(curve[k].precision);
        envelope[k] = best;
    }
    // Recall only moves on true positives, by 1/gt each time.
    let sum: f64 = (1..curve.len())
        .filter(|&k| curve[k].recall > curve[k - 1].recall)
        .map(|k| envelope[k])
        .fold(0.0, |a, b| a + b);
    Some((sum / gt_count as f64).clamp(0.0, 1.0))
}

/// Unweighted mean, minimum and maximum over applicable classes.
pub fn mean_ap(per_class: &[Option<f64>]) -> Result<(f64, f64, f64)> {
    let vals: Vec<f64> = per_class.iter().flatten().copied().collect();
    if vals.is_empty() {
        return Err(EvalError::Config("no class has ground truth; mAP is undefined".into()));
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((mean, min, max))
}

/// Per-class scored outcomes and ground-truth counts from a match result.
pub fn class_outcomes(
    detections: &[Vec<Detection>],
    truths: &[FrameTruth],
    matches: &MatchResult,
    num_classes: usize,
) -> (Vec<Vec<ScoredOutcome>>, Vec<usize>) {
    let mut outcomes = vec![Vec::new(); num_classes];
    let mut gt_counts = vec![0usize; num_classes];
    for (f, (dets, res)) in detections.iter().zip(&matches.detections).enumerate() {
        for (i, (d, o)) in dets.iter().zip(res).enumerate() {
            if d.class_id < num_classes {
                outcomes[d.class_id].push(ScoredOutcome {
                    score: d.score,
                    frame: f,
                    index: i,
                    true_positive: matches!(o, DetOutcome::TruePositive(_)),
                });
            }
        }
    }
    for t in truths {
        for &c in &t.classes {
            if c < num_classes {
                gt_counts[c] += 1;
            }
        }
    }
    (outcomes, gt_counts)
}

/// `(C+1)×(C+1)` counts from class-agnostic greedy matching.
///
/// Detections (in descending score order per frame) take the unmatched
/// ground-truth box of any class with the highest IoU ≥ `iou_threshold`.
/// Cell `(i, j)`: boxes of class `i` matched by a class-`j` detection.
/// Row `C`: unmatched detections by predicted class. Column `C`: missed
/// boxes by true class.
pub fn confusion_matrix(
    detections: &[Vec<Detection>],
    truths: &[FrameTruth],
    num_classes: usize,
    iou_threshold: f64,
) -> Result<Vec<Vec<u64>>> {
    if detections.len() != truths.len() {
        return Err(EvalError::Config("detection and ground-truth frame counts differ".into()));
    }
    let c = num_classes;
    let mut m = vec![vec![0u64; c + 1]; c + 1];
    for (dets, gt) in detections.iter().zip(truths) {
        let mut matched = vec![false; gt.boxes.len()];
        for d in score_order(dets) {
            let pred = dets[d].class_id.min(c);
            let mut best: Option<(usize, f64)> = None;
            for (g, b) in gt.boxes.iter().enumerate() {
                if matched[g] {
                    continue;
                }
                let v = iou(&dets[d].bbox, b);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, v)) if v >= iou_threshold => {
                    matched[g] = true;
                    m[gt.classes[g].min(c)][pred] += 1;
                }
                _ => m[c][pred] += 1,
            }
        }
        for (g, &hit) in matched.iter().enumerate() {
            if !hit {
                m[gt.classes[g].min(c)][c] += 1;
            }
        }
    }
    Ok(m)
}
