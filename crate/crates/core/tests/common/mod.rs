//! Independent oracles and random instance generators shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tka_detect::detector::{BackboneConfig, Detection, ModelConfig};
use tka_detect::eval::{DetOutcome, FrameTruth, ScoredOutcome};
use tka_detect::geometry::{iou, BBox, BoxDelta};
use tka_detect::rpn::{AnchorLabel, AnchorLabelSet, AnchorSample, RpnLossConfig, RpnTargets};
use tka_detect::tensor::{
    conv2d_backward, conv2d_forward, linear, linear_backward, relu, relu_backward, smooth_l1,
    softmax_cross_entropy, grad_check, Scalar, Tensor,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_box(rng: &mut ChaCha8Rng, extent: f64) -> BBox {
    let w = rng.gen_range(2.0..extent / 2.0);
    let h = rng.gen_range(2.0..extent / 2.0);
    let x = rng.gen_range(0.0..extent - w);
    let y = rng.gen_range(0.0..extent - h);
    BBox::new(x, y, x + w, y + h)
}

/// Random boxes clustered around a few centres so that overlaps are common.
pub fn clustered_boxes(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<BBox> {
    let centres: Vec<BBox> = (0..rng.gen_range(1..4)).map(|_| random_box(rng, extent)).collect();
    (0..n)
        .map(|_| {
            let c = centres[rng.gen_range(0..centres.len())];
            let j = |rng: &mut ChaCha8Rng| rng.gen_range(-4.0..4.0);
            BBox::new(c.x_min + j(rng), c.y_min + j(rng), c.x_max + j(rng).abs() + 1.0, c.y_max + j(rng).abs() + 1.0)
        })
        .collect()
}

fn tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let v: Vec<T> = (0..n).map(|_| T::cast(rng.gen_range(-scale..scale))).collect();
    Tensor::new(shape, v).unwrap()
}

/// Values bounded away from zero by `gap`, for probing kinked functions.
fn away_from<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, kinks: &[f64], gap: f64) -> Vec<T> {
    (0..n)
        .map(|_| loop {
            let v: f64 = rng.gen_range(-2.5..2.5);
            if kinks.iter().all(|k| (v - k).abs() > gap) {
                break T::cast(v);
            }
        })
        .collect()
}

// ------------------------------------------------------- random instances

pub fn random_frames(seed: u64) -> (Vec<Vec<Detection>>, Vec<FrameTruth>) {
    let mut r = rng(seed);
    let frames = r.gen_range(1..4);
    let mut dets = Vec::new();
    let mut truths = Vec::new();
    for _ in 0..frames {
        let n_gt = r.gen_range(0..5);
        let extra = r.gen_range(0..6);
        let boxes = clustered_boxes(&mut r, n_gt + extra, 60.0);
        let classes: Vec<usize> = (0..boxes.len()).map(|_| r.gen_range(0..2)).collect();
        truths.push(FrameTruth {
            boxes: boxes[..n_gt].to_vec(),
            classes: classes[..n_gt].to_vec(),
        });
        dets.push(
            boxes
                .iter()
                .zip(&classes)
                .map(|(b, &c)| Detection {
                    class_id: c,
                    score: r.gen_range(0..4) as f64 / 4.0,
                    bbox: *b,
                })
                .collect(),
        );
    }
    (dets, truths)
}

pub fn random_outcomes(seed: u64) -> (Vec<ScoredOutcome>, usize) {
    let mut r = rng(seed);
    let n = r.gen_range(0..30);
    let outcomes: Vec<ScoredOutcome> = (0..n)
        .map(|i| ScoredOutcome {
            score: r.gen_range(0..5) as f64 / 4.0,
            frame: r.gen_range(0..3),
            index: i,
            true_positive: r.gen_bool(0.5),
        })
        .collect();
    let tp = outcomes.iter().filter(|o| o.true_positive).count();
    (outcomes, tp + r.gen_range(0..4))
}

// ---------------------------------------------------------------- oracles

/// Greedy suppression from its definition: a box survives iff no
/// higher-ranked surviving box overlaps it by more than the threshold.
pub fn nms_oracle(boxes: &[BBox], scores: &[f64], thr: f64) -> Vec<usize> {
    let n = boxes.len();
    let mut rank: Vec<usize> = (0..n).collect();
    // insertion sort: score desc, index asc
    for i in 1..n {
        let mut j = i;
        while j > 0 && (scores[rank[j]] > scores[rank[j - 1]] || (scores[rank[j]] == scores[rank[j - 1]] && rank[j] < rank[j - 1])) {
            rank.swap(j, j - 1);
            j -= 1;
        }
    }
    let matrix: Vec<Vec<f64>> = boxes.iter().map(|a| boxes.iter().map(|b| iou(a, b)).collect()).collect();
    let mut alive = vec![false; n];
    for (p, &i) in rank.iter().enumerate() {
        alive[i] = rank[..p].iter().all(|&j| !alive[j] || matrix[j][i] <= thr);
    }
    rank.into_iter().filter(|&i| alive[i]).collect()
}

/// Matching by exhaustive scan: in score order each detection takes the
/// same-class, still-free gt of highest IoU, lowest index on ties.
pub fn match_oracle(dets: &[Vec<Detection>], truths: &[FrameTruth], thr: f64) -> Vec<Vec<DetOutcome>> {
    dets.iter()
        .zip(truths)
        .map(|(ds, t)| {
            let mut order: Vec<usize> = (0..ds.len()).collect();
            order.sort_by(|&a, &b| ds[b].score.partial_cmp(&ds[a].score).unwrap().then(a.cmp(&b)));
            let mut taken = vec![false; t.boxes.len()];
            let mut out = vec![DetOutcome::FalsePositive; ds.len()];
            for d in order {
                let mut cands: Vec<(f64, usize)> = (0..t.boxes.len())
                    .filter(|&g| !taken[g] && t.classes[g] == ds[d].class_id)
                    .map(|g| (iou(&ds[d].bbox, &t.boxes[g]), g))
                    .collect();
                cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                if let Some(&(v, g)) = cands.first() {
                    if v >= thr {
                        taken[g] = true;
                        out[d] = DetOutcome::TruePositive(g);
                    }
                }
            }
            out
        })
        .collect()
}

/// Area under the precision envelope, computed from the definition with
/// an O(n²) scan.
pub fn ap_oracle(outcomes: &[ScoredOutcome], gt_count: usize) -> Option<f64> {
    if gt_count == 0 {
        return None;
    }
    let mut o = outcomes.to_vec();
    o.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.frame.cmp(&b.frame))
            .then(a.index.cmp(&b.index))
    });
    let prec: Vec<f64> = (1..=o.len())
        .map(|k| o[..k].iter().filter(|x| x.true_positive).count() as f64 / k as f64)
        .collect();
    // each true positive lifts recall by 1/gt; weight it by the best
    // precision at or after its rank
    let sum: f64 = (0..o.len())
        .filter(|&k| o[k].true_positive)
        .map(|k| prec[k..].iter().copied().fold(0.0, f64::max))
        .fold(0.0, |a, b| a + b);
    Some((sum / gt_count as f64).clamp(0.0, 1.0))
}

/// Checks a labelling against the rule set, rebuilt from a fresh IoU
/// matrix. Returns a description of the first violation.
pub fn check_labels(anchors: &[BBox], gts: &[BBox], cfg: &RpnLossConfig, got: &AnchorLabelSet) -> Result<(), String> {
    let n = anchors.len();
    if got.labels.len() != n {
        return Err("label count".into());
    }
    let m: Vec<Vec<f64>> = anchors.iter().map(|a| gts.iter().map(|g| iou(a, g)).collect()).collect();
    let best = |i: usize| m[i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // anchors attaining some gt's maximum
    let mut argmax_of: Vec<Vec<usize>> = vec![Vec::new(); n];
    for g in 0..gts.len() {
        let top = (0..n).map(|i| m[i][g]).fold(f64::NEG_INFINITY, f64::max);
        let holders: Vec<usize> = (0..n).filter(|&i| m[i][g] == top).collect();
        let holders = if top > 0.0 { holders } else { holders[..1].to_vec() };
        for i in holders {
            argmax_of[i].push(g);
        }
    }
    for i in 0..n {
        let b = best(i);
        let expect_pos = !gts.is_empty() && (b > cfg.pos_threshold || !argmax_of[i].is_empty());
        match got.labels[i] {
            AnchorLabel::Positive(g) => {
                if !expect_pos {
                    return Err(format!("anchor {i} positive at best IoU {b}"));
                }
                if m[i][g] != b && !argmax_of[i].contains(&g) {
                    return Err(format!("anchor {i} assigned to gt {g} which is neither its best match nor a box it maximises"));
                }
            }
            AnchorLabel::Negative => {
                if expect_pos || !(gts.is_empty() || b < cfg.neg_threshold) {
                    return Err(format!("anchor {i} negative at best IoU {b}"));
                }
            }
            AnchorLabel::Ignore => {
                if expect_pos || gts.is_empty() || b < cfg.neg_threshold {
                    return Err(format!("anchor {i} ignored at best IoU {b}"));
                }
            }
        }
    }
    for g in 0..gts.len() {
        if !(0..n).any(|i| argmax_of[i].contains(&g) && matches!(got.labels[i], AnchorLabel::Positive(_))) {
            return Err(format!("gt {g} has no positive anchor"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------- gradient suites

pub const GRAD_OPS: [&str; 6] = ["conv2d", "linear", "relu", "softmax_cross_entropy", "smooth_l1", "rpn_loss"];

fn weighted_sum<T: Scalar>(y: &Tensor<T>, g: &[f64]) -> f64 {
    y.data().iter().zip(g).map(|(a, b)| a.as_f64() * b).sum()
}

fn cast_vec<T: Scalar>(g: &[f64]) -> Vec<T> {
    g.iter().map(|&v| T::cast(v)).collect()
}

/// Runs the finite-difference check for one random instance of `op`;
/// returns the largest relative error.
pub fn grad_instance<T: Scalar>(op: &str, seed: u64, eps: f64) -> f64 {
    let mut r = rng(seed);
    let report = match op {
        "conv2d" => {
            let c = r.gen_range(1..3);
            let k = r.gen_range(1..3);
            let kh = r.gen_range(1..4);
            let (h, w) = (r.gen_range(kh..6), r.gen_range(kh..6));
            let stride = r.gen_range(1..3);
            let pad = r.gen_range(0..2);
            let inputs = vec![
                tensor::<T>(&mut r, &[c, h, w], 1.0),
                tensor::<T>(&mut r, &[k, c, kh, kh], 1.0),
                tensor::<T>(&mut r, &[k], 1.0),
            ];
            let out_len = conv2d_forward(&inputs[0], &inputs[1], &inputs[2], stride, pad).unwrap().0.len();
            let g: Vec<f64> = (0..out_len).map(|_| r.gen_range(-1.0..1.0)).collect();
            grad_check(
                |x: &[Tensor<T>]| {
                    let (y, cache) = conv2d_forward(&x[0], &x[1], &x[2], stride, pad).unwrap();
                    let gr = conv2d_backward(&cache, &x[1], &cast_vec(&g), true).unwrap();
                    Ok((weighted_sum(&y, &g), vec![gr.input.unwrap(), gr.kernel, gr.bias]))
                },
                &inputs,
                eps,
                f64::INFINITY,
            )
        }
        "linear" => {
            let (b, n, m) = (r.gen_range(1..4), r.gen_range(1..6), r.gen_range(1..5));
            let inputs = vec![
                tensor::<T>(&mut r, &[b, n], 1.0),
                tensor::<T>(&mut r, &[m, n], 1.0),
                tensor::<T>(&mut r, &[m], 1.0),
            ];
            let g: Vec<f64> = (0..b * m).map(|_| r.gen_range(-1.0..1.0)).collect();
            grad_check(
                |x: &[Tensor<T>]| {
                    let y = linear(&x[0], &x[1], &x[2]).unwrap();
                    let gr = linear_backward(&x[0], &x[1], &cast_vec(&g)).unwrap();
                    Ok((weighted_sum(&y, &g), vec![gr.input, gr.weight, gr.bias]))
                },
                &inputs,
                eps,
                f64::INFINITY,
            )
        }
        "relu" => {
            let n = r.gen_range(1..20);
            let inputs = vec![Tensor::new(&[n], away_from::<T>(&mut r, n, &[0.0], 5.0 * eps)).unwrap()];
            let g: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
            grad_check(
                |x: &[Tensor<T>]| {
                    let y = relu(&x[0]);
                    let gi = relu_backward(&y, &cast_vec(&g)).unwrap();
                    Ok((weighted_sum(&y, &g), vec![gi]))
                },
                &inputs,
                eps,
                f64::INFINITY,
            )
        }
        "softmax_cross_entropy" => {
            let k = r.gen_range(2..8);
            let target = r.gen_range(0..k);
            let inputs = vec![tensor::<T>(&mut r, &[k], 3.0)];
            grad_check(
                |x: &[Tensor<T>]| {
                    let (l, g) = softmax_cross_entropy(&x[0], target).unwrap();
                    Ok((l, vec![g]))
                },
                &inputs,
                eps,
                f64::INFINITY,
            )
        }
        "smooth_l1" => {
            let n = r.gen_range(1..12);
            let target = tensor::<T>(&mut r, &[n], 1.0);
            // choose differences away from the |d| = 1 kink
            let d: Vec<T> = away_from(&mut r, n, &[-1.0, 1.0], 5.0 * eps);
            let pred = Tensor::new(&[n], target.data().iter().zip(&d).map(|(t, d)| *t + *d).collect()).unwrap();
            grad_check(
                |x: &[Tensor<T>]| {
                    let (l, g) = smooth_l1(&x[0], &target).unwrap();
                    Ok((l, vec![g]))
                },
                &[pred],
                eps,
                f64::INFINITY,
            )
        }
        "rpn_loss" => {
            let a = r.gen_range(2..10);
            let mut idx: Vec<usize> = (0..a).collect();
            for i in (1..a).rev() {
                idx.swap(i, r.gen_range(0..=i));
            }
            let n_pos = r.gen_range(1..a);
            let mut positives = idx[..n_pos].to_vec();
            let mut negatives = idx[n_pos..].to_vec();
            positives.sort_unstable();
            negatives.sort_unstable();
            let logits = tensor::<T>(&mut r, &[a, 2], 2.0);
            let deltas = tensor::<T>(&mut r, &[a, 4], 1.0);
            let regression: Vec<(usize, BoxDelta)> = positives
                .iter()
                .map(|&i| {
                    let d: Vec<f64> = away_from::<f64>(&mut r, 4, &[-1.0, 1.0], 5.0 * eps);
                    let p = &deltas.data()[4 * i..4 * i + 4];
                    (i, BoxDelta::new(p[0].as_f64() - d[0], p[1].as_f64() - d[1], p[2].as_f64() - d[2], p[3].as_f64() - d[3]))
                })
                .collect();
            let targets = RpnTargets {
                sample: AnchorSample { positives, negatives },
                regression,
                anchor_count: a,
                anchor_positions: a,
            };
            let cfg = RpnLossConfig {
                lambda: r.gen_range(0.5..10.0),
                ..RpnLossConfig::default()
            };
            grad_check(
                |x: &[Tensor<T>]| {
                    let l = tka_detect::rpn::rpn_loss(&x[0], &x[1], &targets, &cfg).unwrap();
                    Ok((l.total, vec![l.grad_logits, l.grad_deltas]))
                },
                &[logits, deltas],
                eps,
                f64::INFINITY,
            )
        }
        other => panic!("unknown op {other}"),
    };
    report.unwrap().max_rel_error
}

/// Max relative error over `instances` random instances.
pub fn grad_suite<T: Scalar>(op: &str, instances: u64, eps: f64) -> f64 {
    (0..instances).map(|s| grad_instance::<T>(op, 1000 + s, eps)).fold(0.0, f64::max)
}

// ------------------------------------------------------------ tiny models

pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            conv_channels: vec![4, 8],
            pools_after: vec![0, 1],
            input_w: 48,
            input_h: 40,
        },
        rpn_channels: 8,
        anchor_scales: vec![12.0, 24.0],
        anchor_ratios: vec![1.0],
        roi_pool_size: 3,
        head_hidden: 16,
        bbox_std: [0.1, 0.1, 0.2, 0.2],
    }
}
