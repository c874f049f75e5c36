use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::resize_bilinear;
use crate::geometry::{clip_box, decode, generate_anchors, nms, rank_by_score, BBox, BoxDelta};
use crate::rpn::{generate_proposals, ProposalConfig};
use crate::tensor::{softmax, Tensor};

use super::forward::{backbone_forward, head_forward, rpn_forward};
use super::model::DetectorModel;
use super::roi::map_to_features;
use super::{Detection, DetectorError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectConfig {
    pub score_threshold: f64,
    /// Per-class suppression threshold.
    pub nms_iou: f64,
    pub max_detections: usize,
    pub proposals: ProposalConfig,
    /// Resize frames that differ from the model's working size; when
    /// false such frames are rejected.
    pub resize: bool,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.05,
            nms_iou: 0.3,
            max_detections: 100,
            proposals: ProposalConfig {
                pre_nms_top_n: 1000,
                post_nms_top_n: 100,
                nms_iou: 0.7,
                min_box_side: 4.0,
            },
            resize: true,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(DetectorError::Config("score_threshold must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(DetectorError::Config("nms_iou must be in [0, 1]".into()));
        }
        self.proposals.validate()?;
        Ok(())
    }
}

/// Runs the full detector on one `3×H×W` frame. Returns detections in the
/// frame's own coordinates and the wall-clock seconds of the pass
/// (excluding decode, including any resize).
pub fn forward_detect(
    model: &DetectorModel,
    image: &Tensor,
    config: &DetectConfig,
) -> Result<(Vec<Detection>, f64)> {
    config.validate()?;
    let start = Instant::now();
    if image.rank() != 3 || image.shape()[0] != 3 {
        return Err(DetectorError::Config(format!("expected a 3×H×W image, got {:?}", image.shape())));
    }
    let (ih, iw) = (image.shape()[1], image.shape()[2]);
    let bb = &model.config.backbone;
    let (w, h) = (bb.input_w, bb.input_h);
    let resized;
    let input = if (iw, ih) == (w, h) {
        image
    } else if config.resize {
        resized = resize_bilinear(image, w, h)?;
        &resized
    } else {
        return Err(DetectorError::Config(format!(
            "image is {iw}x{ih} but the model expects {w}x{h} and resizing is disabled"
        )));
    };

    let (features, _) = backbone_forward(model, input)?;
    let (rpn, _) = rpn_forward(model, &features)?;
    let anchors = generate_anchors(&model.config.anchor_grid())?;
    let scores: Vec<f64> = rpn.logits.data().chunks_exact(2).map(|l| softmax(l)[1] as f64).collect();
    let deltas: Vec<BoxDelta> = rpn
        .deltas
        .data()
        .chunks_exact(4)
        .map(|d| BoxDelta::new(d[0] as f64, d[1] as f64, d[2] as f64, d[3] as f64))
        .collect();
    let (wf, hf) = (w as f64, h as f64);
    let proposals = generate_proposals(&scores, &deltas, &anchors, wf, hf, &config.proposals)?;
    let stride = bb.total_stride() as f64;
    let (fh, fw) = bb.feature_dims();
    let rois: Vec<BBox> = proposals
        .iter()
        .map(|p| p.bbox)
        .filter(|b| map_to_features(b, stride, fw, fh).is_ok())
        .collect();
    let mut detections = Vec::new();
    if !rois.is_empty() {
        let (head, _) = head_forward(model, &features, &rois)?;
        let c = model.num_classes();
        let std = model.config.bbox_std;
        let (sx, sy) = (iw as f64 / wf, ih as f64 / hf);
        for class in 0..c {
            let mut boxes = Vec::new();
            let mut class_scores = Vec::new();
            for (k, roi) in rois.iter().enumerate() {
                let probs = softmax(&head.class_logits.data()[k * (c + 1)..(k + 1) * (c + 1)]);
                let score = (probs[class + 1] as f64).clamp(0.0, 1.0);
                if score < config.score_threshold {
                    continue;
                }
                let d = &head.deltas.data()[k * 4 * c + 4 * class..][..4];
                let delta = BoxDelta::new(
                    d[0] as f64 * std[0],
                    d[1] as f64 * std[1],
                    d[2] as f64 * std[2],
                    d[3] as f64 * std[3],
                )
                .clamped();
                let b = clip_box(&decode(roi, &delta)?, wf, hf);
                if b.width() > 0.0 && b.height() > 0.0 {
                    boxes.push(clip_box(&b.scale(sx, sy), iw as f64, ih as f64));
                    class_scores.push(score);
                }
            }
            for k in nms(&boxes, &class_scores, config.nms_iou)? {
                detections.push(Detection {
                    class_id: class,
                    score: class_scores[k],
                    bbox: boxes[k],
                });
            }
        }
    }
    let order = rank_by_score(&detections.iter().map(|d| d.score).collect::<Vec<_>>());
    let mut ranked: Vec<Detection> = order.into_iter().map(|i| detections[i]).collect();
    ranked.truncate(config.max_detections);
    Ok((ranked, start.elapsed().as_secs_f64()))
}
