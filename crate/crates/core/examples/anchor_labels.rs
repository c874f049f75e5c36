//! Label anchors against ground truth, draw a minibatch and evaluate the
//! proposal loss on it.
//!
//!     cargo run --example anchor_labels

use tka_detect::detector::ModelConfig;
use tka_detect::geometry::{generate_anchors, BBox};
use tka_detect::rpn::{assign_anchor_labels, rpn_loss, sample_anchor_minibatch, AnchorLabel, RpnLossConfig, RpnTargets};
use tka_detect::tensor::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = ModelConfig::default();
    let grid = model.anchor_grid();
    let anchors = generate_anchors(&grid)?;
    let gts = [BBox::new(40., 30., 100., 90.), BBox::new(200., 120., 240., 210.)];
    let config = RpnLossConfig::default();

    let labels = assign_anchor_labels(&anchors, &gts, &config);
    let ignored = labels.labels.iter().filter(|l| **l == AnchorLabel::Ignore).count();
    println!(
        "thresholds {}/{}: {} positive, {} negative, {} ignored",
        config.pos_threshold,
        config.neg_threshold,
        labels.positives().len(),
        labels.negatives().len(),
        ignored
    );
    for (g, b) in gts.iter().enumerate() {
        let best = labels
            .labels
            .iter()
            .zip(&labels.matched_iou)
            .filter(|(l, _)| **l == AnchorLabel::Positive(g))
            .map(|(_, v)| *v)
            .fold(0.0, f64::max);
        println!("gt {g} {b:?}: best positive IoU {best:.3}");
    }

    let sample = sample_anchor_minibatch(&labels, &config, 0)?;
    let targets = RpnTargets::new(&anchors, &gts, &labels, sample, grid.feature_w * grid.feature_h)?;
    // an untrained predictor: even logits, zero deltas
    let logits = Tensor::<f32>::zeros(&[anchors.len(), 2]);
    let deltas = Tensor::<f32>::zeros(&[anchors.len(), 4]);
    let loss = rpn_loss(&logits, &deltas, &targets, &config)?;
    println!(
        "loss on {} sampled anchors: cls {:.4} (= ln 2) + reg {:.4} = {:.4}",
        targets.sample.len(),
        loss.classification,
        loss.regression,
        loss.total
    );
    Ok(())
}
