//! Region proposal machinery: anchor labeling, minibatch sampling, the
//! multi-task objectness/regression loss and proposal generation.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, clip_box, decode, encode, iou, rank_by_score, BBox, BoxDelta};
use crate::tensor::{softmax_cross_entropy, smooth_l1_scalar, Scalar, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RpnError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("internal consistency error: {0}")]
    Consistency(String),
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, RpnError>;

/// Training label of one anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorLabel {
    /// Object anchor matched to the ground-truth box at this index.
    Positive(usize),
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorLabelSet {
    pub labels: Vec<AnchorLabel>,
    /// Highest IoU of each anchor against any ground-truth box.
    pub matched_iou: Vec<f64>,
}

impl AnchorLabelSet {
    pub fn positives(&self) -> Vec<usize> {
        self.indices_where(|l| matches!(l, AnchorLabel::Positive(_)))
    }

    pub fn negatives(&self) -> Vec<usize> {
        self.indices_where(|l| *l == AnchorLabel::Negative)
    }

    fn indices_where(&self, pred: impl Fn(&AnchorLabel) -> bool) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| pred(l))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpnLossConfig {
    /// Weight of the regression term.
    pub lambda: f64,
    /// Classification normalizer; `None` uses the number of sampled anchors.
    pub n_cls: Option<f64>,
    /// Regression normalizer; `None` uses the number of anchor positions.
    pub n_reg: Option<f64>,
    pub pos_threshold: f64,
    pub neg_threshold: f64,
    pub sample_size: usize,
    pub pos_fraction: f64,
    /// Treat anchors crossing the image border as `Ignore` during training.
    #[serde(default)]
    pub exclude_cross_boundary: bool,
}

impl Default for RpnLossConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            n_cls: None,
            n_reg: None,
            pos_threshold: 0.8,
            neg_threshold: 0.3,
            sample_size: 256,
            pos_fraction: 0.5,
            exclude_cross_boundary: false,
        }
    }
}

impl RpnLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.neg_threshold
            && self.neg_threshold < self.pos_threshold
            && self.pos_threshold <= 1.0)
        {
            return Err(RpnError::Config(format!(
                "thresholds must satisfy 0 <= neg ({}) < pos ({}) <= 1",
                self.neg_threshold, self.pos_threshold
            )));
        }
        if !(self.pos_fraction > 0.0 && self.pos_fraction < 1.0) {
            return Err(RpnError::Config("pos_fraction must be in (0, 1)".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(RpnError::Config("lambda must be finite and >= 0".into()));
        }
        for (name, v) in [("n_cls", self.n_cls), ("n_reg", self.n_reg)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(RpnError::Config(format!("{name} must be positive")));
                }
            }
        }
        if self.sample_size == 0 {
            return Err(RpnError::Config("sample_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalConfig {
    pub pre_nms_top_n: usize,
    pub post_nms_top_n: usize,
    pub nms_iou: f64,
    pub min_box_side: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            pre_nms_top_n: 2000,
            post_nms_top_n: 300,
            nms_iou: 0.7,
            min_box_side: 4.0,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.post_nms_top_n == 0 || self.post_nms_top_n > self.pre_nms_top_n {
            return Err(RpnError::Config(
                "need 0 < post_nms_top_n <= pre_nms_top_n".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(RpnError::Config("nms_iou must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Labels anchors against ground truth.
///
/// An anchor is `Positive` when its best IoU exceeds `pos_threshold`, and
/// every anchor that attains a ground-truth box's highest IoU (ties
/// included) is `Positive` regardless of threshold. Remaining anchors with
/// best IoU below `neg_threshold` are `Negative`; the rest are `Ignore`.
pub fn assign_anchor_labels(
    anchors: &[BBox],
    gt_boxes: &[BBox],
    config: &RpnLossConfig,
) -> AnchorLabelSet {
    assign_anchor_labels_masked(anchors, gt_boxes, config, None)
}

/// As [`assign_anchor_labels`], with anchors where `usable[i]` is false
/// forced to `Ignore` and excluded from the per-box argmax.
pub fn assign_anchor_labels_masked(
    anchors: &[BBox],
    gt_boxes: &[BBox],
    config: &RpnLossConfig,
    usable: Option<&[bool]>,
) -> AnchorLabelSet {
    let usable_at = |i: usize| usable.is_none_or(|u| u[i]);
    let n = anchors.len();
    if gt_boxes.is_empty() {
        let labels = (0..n)
            .map(|i| {
                if usable_at(i) {
                    AnchorLabel::Negative
                } else {
                    AnchorLabel::Ignore
                }
            })
            .collect();
        return AnchorLabelSet {
            labels,
            matched_iou: vec![0.0; n],
        };
    }

    let overlaps: Vec<Vec<f64>> = anchors
        .iter()
        .map(|a| gt_boxes.iter().map(|g| iou(a, g)).collect())
        .collect();

    let mut matched_iou = Vec::with_capacity(n);
    let mut matched_gt = Vec::with_capacity(n);
    for row in &overlaps {
        let (best_g, best) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (g, &v)| {
                if v > acc.1 {
                    (g, v)
                } else {
                    acc
                }
            });
        matched_iou.push(best);
        matched_gt.push(best_g);
    }

    // anchor -> (gt, iou) for anchors forced positive as some box's best match
    let mut forced: Vec<Option<(usize, f64)>> = vec![None; n];
    for g in 0..gt_boxes.len() {
        let best = (0..n)
            .filter(|&i| usable_at(i))
            .map(|i| overlaps[i][g])
            .fold(f64::NEG_INFINITY, f64::max);
        if best == f64::NEG_INFINITY {
            continue;
        }
        let ties: Vec<usize> = (0..n)
            .filter(|&i| usable_at(i) && overlaps[i][g] == best)
            .collect();
        // a box touching no anchor at all gets a single representative
        let chosen = if best > 0.0 { &ties[..] } else { &ties[..1] };
        for &i in chosen {
            match forced[i] {
                Some((_, v)) if v >= best => {}
                _ => forced[i] = Some((g, best)),
            }
        }
    }

    let labels = (0..n)
        .map(|i| {
            if !usable_at(i) {
                AnchorLabel::Ignore
            } else if matched_iou[i] > config.pos_threshold {
                AnchorLabel::Positive(matched_gt[i])
            } else if let Some((g, _)) = forced[i] {
                AnchorLabel::Positive(g)
            } else if matched_iou[i] < config.neg_threshold {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect();
    AnchorLabelSet {
        labels,
        matched_iou,
    }
}

/// Anchor indices drawn for one loss evaluation, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnchorSample {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl AnchorSample {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws up to `sample_size·pos_fraction` positives and fills the rest of
/// the sample with negatives, uniformly without replacement.
pub fn sample_anchor_minibatch(
    labelset: &AnchorLabelSet,
    config: &RpnLossConfig,
    seed: u64,
) -> Result<AnchorSample> {
    if config.sample_size == 0 {
        return Err(RpnError::Config("sample_size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = labelset.positives();
    let neg = labelset.negatives();
    let pos_cap = (config.sample_size as f64 * config.pos_fraction).floor() as usize;
    let n_pos = pos.len().min(pos_cap);
    let n_neg = neg.len().min(config.sample_size - n_pos);
    let mut draw = |pool: &[usize], k: usize| -> Vec<usize> {
        let mut picked: Vec<usize> = sample_indices(&mut rng, pool.len(), k)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        picked.sort_unstable();
        picked
    };
    let positives = draw(&pos, n_pos);
    let negatives = draw(&neg, n_neg);
    Ok(AnchorSample {
        positives,
        negatives,
    })
}

/// Per-image regression targets for the sampled positive anchors.
#[derive(Debug, Clone)]
pub struct RpnTargets {
    pub sample: AnchorSample,
    /// `(anchor index, encoded target)` for every sampled positive.
    pub regression: Vec<(usize, BoxDelta)>,
    pub anchor_count: usize,
    pub anchor_positions: usize,
}

impl RpnTargets {
    pub fn new(
        anchors: &[BBox],
        gt_boxes: &[BBox],
        labels: &AnchorLabelSet,
        sample: AnchorSample,
        anchor_positions: usize,
    ) -> Result<Self> {
        if labels.labels.len() != anchors.len() {
            return Err(RpnError::Dimension(format!(
                "{} labels for {} anchors",
                labels.labels.len(),
                anchors.len()
            )));
        }
        let mut regression = Vec::with_capacity(sample.positives.len());
        for &i in &sample.positives {
            match labels.labels.get(i) {
                Some(AnchorLabel::Positive(g)) => {
                    let gt = gt_boxes.get(*g).ok_or_else(|| {
                        RpnError::Consistency(format!(
                            "anchor {i} matched to missing ground-truth box {g}"
                        ))
                    })?;
                    regression.push((i, encode(&anchors[i], gt)?));
                }
                _ => {
                    return Err(RpnError::Consistency(format!(
                        "sampled positive anchor {i} is not labeled positive"
                    )))
                }
            }
        }
        for &i in &sample.negatives {
            if labels.labels.get(i) != Some(&AnchorLabel::Negative) {
                return Err(RpnError::Consistency(format!(
                    "sampled negative anchor {i} is not labeled negative"
                )));
            }
        }
        Ok(Self {
            sample,
            regression,
            anchor_count: anchors.len(),
            anchor_positions,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RpnLoss<T: Scalar> {
    pub total: f64,
    pub classification: f64,
    /// Regression term after λ and normalization.
    pub regression: f64,
    /// Gradient w.r.t. the `[A, 2]` objectness logits.
    pub grad_logits: Tensor<T>,
    /// Gradient w.r.t. the `[A, 4]` predicted deltas.
    pub grad_deltas: Tensor<T>,
}

/// Multi-task proposal loss over the sampled anchors:
/// `(1/N_cls)·Σ CE(logits_i, p*_i) + λ·(1/N_reg)·Σ_{positives} smoothL1(t_i − t*_i)`.
///
/// Logit column 1 is "object", column 0 "background".
pub fn rpn_loss<T: Scalar>(
    obj_logits: &Tensor<T>,
    pred_deltas: &Tensor<T>,
    targets: &RpnTargets,
    config: &RpnLossConfig,
) -> Result<RpnLoss<T>> {
    let a = targets.anchor_count;
    if obj_logits.shape() != [a, 2] || pred_deltas.shape() != [a, 4] {
        return Err(RpnError::Dimension(format!(
            "expected logits [{a}, 2] and deltas [{a}, 4], got {:?} and {:?}",
            obj_logits.shape(),
            pred_deltas.shape()
        )));
    }
    let n_cls = config
        .n_cls
        .unwrap_or(targets.sample.len().max(1) as f64);
    let n_reg = config
        .n_reg
        .unwrap_or(targets.anchor_positions.max(1) as f64);

    let mut grad_logits = vec![T::zero(); a * 2];
    let mut cls_sum = 0.0;
    let sampled = targets
        .sample
        .positives
        .iter()
        .map(|&i| (i, 1))
        .chain(targets.sample.negatives.iter().map(|&i| (i, 0)));
    for (i, label) in sampled {
        let logits = Tensor::new(&[2], obj_logits.data()[2 * i..2 * i + 2].to_vec())?;
        let (l, g) = softmax_cross_entropy(&logits, label)?;
        cls_sum += l;
        for k in 0..2 {
            grad_logits[2 * i + k] = grad_logits[2 * i + k] + T::cast(g.data()[k].as_f64() / n_cls);
        }
    }

    let mut grad_deltas = vec![T::zero(); a * 4];
    let mut reg_sum = 0.0;
    let reg_scale = config.lambda / n_reg;
    for &(i, target) in &targets.regression {
        for (k, t) in target.to_array().into_iter().enumerate() {
            let (f, df) = smooth_l1_scalar(pred_deltas.data()[4 * i + k].as_f64() - t);
            reg_sum += f;
            grad_deltas[4 * i + k] = grad_deltas[4 * i + k] + T::cast(df * reg_scale);
        }
    }

    let classification = cls_sum / n_cls;
    let regression = reg_scale * reg_sum;
    Ok(RpnLoss {
        total: classification + regression,
        classification,
        regression,
        grad_logits: Tensor::new(&[a, 2], grad_logits)?,
        grad_deltas: Tensor::new(&[a, 4], grad_deltas)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    pub score: f64,
}

/// Decodes, clips, filters small boxes, keeps the top `pre_nms_top_n`,
/// suppresses overlaps and keeps the top `post_nms_top_n`.
pub fn generate_proposals(
    obj_scores: &[f64],
    pred_deltas: &[BoxDelta],
    anchors: &[BBox],
    image_w: f64,
    image_h: f64,
    config: &ProposalConfig,
) -> Result<Vec<Proposal>> {
    if obj_scores.len() != anchors.len() || pred_deltas.len() != anchors.len() {
        return Err(RpnError::Dimension(format!(
            "{} scores, {} deltas, {} anchors",
            obj_scores.len(),
            pred_deltas.len(),
            anchors.len()
        )));
    }
    let mut boxes = Vec::with_capacity(anchors.len());
    let mut scores = Vec::with_capacity(anchors.len());
    for ((anchor, delta), &score) in anchors.iter().zip(pred_deltas).zip(obj_scores) {
        let b = clip_box(&decode(anchor, &delta.clamped())?, image_w, image_h);
        if b.width() >= config.min_box_side && b.height() >= config.min_box_side {
            boxes.push(b);
            scores.push(score);
        }
    }
    let mut top = rank_by_score(&scores);
    top.truncate(config.pre_nms_top_n);
    let top_boxes: Vec<BBox> = top.iter().map(|&i| boxes[i]).collect();
    let top_scores: Vec<f64> = top.iter().map(|&i| scores[i]).collect();
    let mut keep = geometry::nms(&top_boxes, &top_scores, config.nms_iou)?;
    keep.truncate(config.post_nms_top_n);
    Ok(keep
        .into_iter()
        .map(|k| Proposal {
            bbox: top_boxes[k],
            score: top_scores[k],
        })
        .collect())
}
