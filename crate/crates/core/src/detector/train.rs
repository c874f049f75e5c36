//! Joint training of the proposal network and the detection head.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_frame, resize_bilinear, DatasetManifest, ImageLoader};
use crate::geometry::{
    cross_boundary_flags, encode, generate_anchors, iou, BBox, BoxDelta, GeometryError,
};
use crate::rpn::{
    assign_anchor_labels_masked, generate_proposals, rpn_loss, sample_anchor_minibatch,
    RpnError, RpnTargets,
};
use crate::tensor::{smooth_l1_scalar, softmax, softmax_cross_entropy, Sgd, Tensor};

use super::augment::flip_horizontal;
use super::checkpoint::save_model;
use super::forward::{
    backbone_backward, backbone_forward, head_backward, head_forward, rpn_backward, rpn_forward,
    Gradients,
};
use super::model::{DetectorModel, ModelConfig};
use super::roi::map_to_features;
use super::{DetectorError, Result, TrainConfig};

/// A training frame already at the model's working size.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: Tensor,
    pub boxes: Vec<BBox>,
    /// Zero-based class index per box.
    pub classes: Vec<usize>,
}

impl TrainSample {
    /// Rescales an arbitrary-size frame (and its boxes) to `w×h`.
    pub fn rescaled(image: &Tensor, boxes: &[BBox], classes: Vec<usize>, w: usize, h: usize) -> Result<Self> {
        let (ih, iw) = (image.shape()[1], image.shape()[2]);
        let (sx, sy) = (w as f64 / iw as f64, h as f64 / ih as f64);
        Ok(Self {
            image: resize_bilinear(image, w, h)?,
            boxes: boxes.iter().map(|b| b.scale(sx, sy)).collect(),
            classes,
        })
    }
}

/// Random-access training data. Implementations may decode lazily.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, index: usize) -> Result<TrainSample>;
}

impl SampleSource for [TrainSample] {
    fn len(&self) -> usize {
        <[TrainSample]>::len(self)
    }

    fn get(&self, index: usize) -> Result<TrainSample> {
        Ok(self[index].clone())
    }
}

impl SampleSource for Vec<TrainSample> {
    fn len(&self) -> usize {
        <[TrainSample]>::len(self)
    }

    fn get(&self, index: usize) -> Result<TrainSample> {
        Ok(self[index].clone())
    }
}

/// Frames of a manifest, decoded from disk on demand.
pub struct ManifestSource {
    manifest: DatasetManifest,
    root: PathBuf,
    frames: Vec<(usize, usize)>,
    loader: ImageLoader,
    width: usize,
    height: usize,
}

impl ManifestSource {
    pub fn new(manifest: DatasetManifest, root: &Path, width: usize, height: usize) -> Self {
        let frames = manifest
            .videos
            .iter()
            .enumerate()
            .flat_map(|(v, video)| (0..video.frames.len()).map(move |f| (v, f)))
            .collect();
        Self {
            manifest,
            root: root.to_path_buf(),
            frames,
            loader: ImageLoader::default(),
            width,
            height,
        }
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }
}

impl SampleSource for ManifestSource {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn get(&self, index: usize) -> Result<TrainSample> {
        let (v, f) = self.frames[index];
        let video = &self.manifest.videos[v];
        let frame = load_frame(&self.manifest, &self.root, video, &video.frames[f], &self.loader)?;
        let boxes: Vec<BBox> = frame.annotation.objects.iter().map(|o| o.bbox).collect();
        TrainSample::rescaled(&frame.image, &boxes, frame.class_ids, self.width, self.height)
    }
}

/// Loss components of one iteration, averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub learning_rate: f64,
    pub total: f64,
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub det_cls: f64,
    pub det_reg: f64,
}

impl LogEntry {
    fn add(&mut self, other: &LogEntry) {
        self.total += other.total;
        self.rpn_cls += other.rpn_cls;
        self.rpn_reg += other.rpn_reg;
        self.det_cls += other.det_cls;
        self.det_reg += other.det_reg;
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("rpn_cls loss", self.rpn_cls),
            ("rpn_reg loss", self.rpn_reg),
            ("det_cls loss", self.det_cls),
            ("det_reg loss", self.det_reg),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

pub fn write_log_csv(log: &[LogEntry], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "iteration,learning_rate,total,rpn_cls,rpn_reg,det_cls,det_reg")?;
    for e in log {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.iteration, e.learning_rate, e.total, e.rpn_cls, e.rpn_reg, e.det_cls, e.det_reg
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DetectorModel,
    pub log: Vec<LogEntry>,
    pub checkpoints: Vec<PathBuf>,
}

/// SplitMix64 finalizer; turns (seed, counter) pairs into independent seeds.
pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fixed per-model anchor data shared by every training image.
pub(crate) struct AnchorSet {
    pub anchors: Vec<BBox>,
    /// `false` for anchors crossing the image border.
    pub inside: Vec<bool>,
    pub positions: usize,
}

impl AnchorSet {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let grid = config.anchor_grid();
        let anchors = generate_anchors(&grid)?;
        let inside = cross_boundary_flags(&anchors, grid.image_w, grid.image_h)
            .into_iter()
            .map(|c| !c)
            .collect();
        Ok(Self {
            anchors,
            inside,
            positions: grid.feature_h * grid.feature_w,
        })
    }
}

/// Picks foreground and background regions for the detection head.
/// Returns `(region, gt index if foreground)` pairs, foreground first.
fn sample_rois(
    candidates: &[BBox],
    gt_boxes: &[BBox],
    config: &TrainConfig,
    model: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<(BBox, Option<usize>)> {
    let stride = model.backbone.total_stride() as f64;
    let (fh, fw) = model.backbone.feature_dims();
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (i, roi) in candidates.iter().enumerate() {
        if map_to_features(roi, stride, fw, fh).is_err() {
            continue;
        }
        let best = gt_boxes
            .iter()
            .enumerate()
            .map(|(g, gt)| (g, iou(roi, gt)))
            .fold(None, |acc: Option<(usize, f64)>, (g, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((g, v)),
            });
        match best {
            Some((g, v)) if v >= config.fg_iou => fg.push((i, g)),
            _ => bg.push(i),
        }
    }
    let n = config.rois_per_image;
    let n_fg = fg.len().min((n as f64 * config.fg_fraction).floor() as usize);
    let n_bg = bg.len().min(n - n_fg);
    let mut picked: Vec<usize> = sample_indices(rng, fg.len(), n_fg).into_vec();
    picked.sort_unstable();
    let mut out: Vec<(BBox, Option<usize>)> =
        picked.iter().map(|&k| (candidates[fg[k].0], Some(fg[k].1))).collect();
    let mut picked: Vec<usize> = sample_indices(rng, bg.len(), n_bg).into_vec();
    picked.sort_unstable();
    out.extend(picked.iter().map(|&k| (candidates[bg[k]], None)));
    out
}

/// Forward + backward pass for one image. Returns per-component losses
/// and parameter gradients of their sum.
pub(crate) fn image_step(
    model: &DetectorModel,
    anchors: &AnchorSet,
    sample: &TrainSample,
    config: &TrainConfig,
    seed: u64,
) -> Result<(LogEntry, Gradients)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = model.config.backbone.input_w as f64;
    let h = model.config.backbone.input_h as f64;
    let flipped;
    let (image, gt_boxes) = if config.augment && rng.gen_bool(0.5) {
        flipped = flip_horizontal(&sample.image, &sample.boxes, w);
        (&flipped.0, flipped.1.as_slice())
    } else {
        (&sample.image, sample.boxes.as_slice())
    };

    let (features, bcache) = backbone_forward(model, image)?;
    let (rpn_out, rcache) = rpn_forward(model, &features)?;

    let mask = config.rpn.exclude_cross_boundary.then_some(anchors.inside.as_slice());
    let labels = assign_anchor_labels_masked(&anchors.anchors, gt_boxes, &config.rpn, mask);
    let anchor_sample = sample_anchor_minibatch(&labels, &config.rpn, rng.gen())?;
    let targets = RpnTargets::new(&anchors.anchors, gt_boxes, &labels, anchor_sample, anchors.positions)?;
    let rpn = rpn_loss(&rpn_out.logits, &rpn_out.deltas, &targets, &config.rpn)?;

    let scores: Vec<f64> = rpn_out
        .logits
        .data()
        .chunks_exact(2)
        .map(|l| softmax(l)[1] as f64)
        .collect();
    let deltas: Vec<BoxDelta> = rpn_out
        .deltas
        .data()
        .chunks_exact(4)
        .map(|d| BoxDelta::new(d[0] as f64, d[1] as f64, d[2] as f64, d[3] as f64))
        .collect();
    let proposals = generate_proposals(&scores, &deltas, &anchors.anchors, w, h, &config.proposals)?;
    let mut candidates: Vec<BBox> = proposals.iter().map(|p| p.bbox).collect();
    candidates.extend_from_slice(gt_boxes);
    let rois = sample_rois(&candidates, gt_boxes, config, &model.config, &mut rng);

    let mut grads = Gradients::zeros_like(model);
    let mut grad_features = rpn_backward(
        model,
        &rcache,
        rpn.grad_logits.data(),
        rpn.grad_deltas.data(),
        &mut grads,
    )?;

    let (mut det_cls, mut det_reg) = (0.0, 0.0);
    if !rois.is_empty() {
        let boxes: Vec<BBox> = rois.iter().map(|r| r.0).collect();
        let (head, hcache) = head_forward(model, &features, &boxes)?;
        let c1 = model.num_classes() + 1;
        let r = rois.len() as f64;
        let mut g_cls = vec![0f32; rois.len() * c1];
        let mut g_reg = vec![0f32; rois.len() * 4 * (c1 - 1)];
        let std = model.config.bbox_std;
        for (k, (roi, gt)) in rois.iter().enumerate() {
            let target = gt.map_or(0, |g| sample.classes[g] + 1);
            let logits = Tensor::new(&[c1], head.class_logits.data()[k * c1..(k + 1) * c1].to_vec())?;
            let (l, g) = softmax_cross_entropy(&logits, target)?;
            det_cls += config.det_cls_weight * l / r;
            for (dst, &v) in g_cls[k * c1..].iter_mut().zip(g.data()) {
                *dst = (v as f64 * config.det_cls_weight / r) as f32;
            }
            if let Some(g) = gt {
                let t = encode(roi, &gt_boxes[*g])?.to_array();
                let base = k * 4 * (c1 - 1) + 4 * sample.classes[*g];
                for j in 0..4 {
                    let pred = head.deltas.data()[base + j] as f64;
                    let (f, df) = smooth_l1_scalar(pred - t[j] / std[j]);
                    det_reg += config.det_reg_weight * f / r;
                    g_reg[base + j] = (df * config.det_reg_weight / r) as f32;
                }
            }
        }
        head_backward(model, &hcache, &g_cls, &g_reg, &mut grads, &mut grad_features)?;
    }
    backbone_backward(model, &bcache, grad_features, &mut grads)?;

    let entry = LogEntry {
        iteration: 0,
        learning_rate: 0.0,
        total: rpn.classification + rpn.regression + det_cls + det_reg,
        rpn_cls: rpn.classification,
        rpn_reg: rpn.regression,
        det_cls,
        det_reg,
    };
    Ok((entry, grads))
}

/// Trains a freshly initialized model (seeded by `config.seed`).
pub fn train(
    source: &dyn SampleSource,
    class_names: Vec<String>,
    model_config: ModelConfig,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let model = DetectorModel::init(model_config, class_names, config.seed)?;
    train_from(model, source, config, checkpoint_dir)
}

/// Continues training an existing model.
pub fn train_from(
    mut model: DetectorModel,
    source: &dyn SampleSource,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if source.is_empty() {
        return Err(DetectorError::Config("training set is empty".into()));
    }
    let names = model.param_names();
    let frozen: Vec<bool> = names
        .iter()
        .map(|n| !config.trainable.is_empty() && !config.trainable.iter().any(|p| n.starts_with(p.as_str())))
        .collect();
    if frozen.iter().all(|&f| f) {
        return Err(DetectorError::Config(format!(
            "no parameter matches trainable prefixes {:?}",
            config.trainable
        )));
    }
    let anchors = AnchorSet::new(&model.config)?;
    let mut sgd: Sgd = Sgd::new(config.sgd.clone());
    let mut order_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, u64::MAX, 0));
    let mut order: Vec<usize> = (0..source.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0;
    let batch = config.sgd.batch_size;
    let mut log = Vec::with_capacity(config.sgd.iterations);
    let mut checkpoints = Vec::new();

    for it in 0..config.sgd.iterations {
        let mut picks = Vec::with_capacity(batch);
        for _ in 0..batch {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            picks.push(order[cursor]);
            cursor += 1;
        }
        let results: Vec<Result<(LogEntry, Gradients)>> = picks
            .par_iter()
            .enumerate()
            .map(|(slot, &idx)| {
                let sample = source.get(idx)?;
                image_step(&model, &anchors, &sample, config, mix_seed(config.seed, it as u64, slot as u64))
            })
            .collect();
        let mut entry = LogEntry {
            iteration: it,
            learning_rate: config.sgd.learning_rate * config.lr_scale(it),
            total: 0.0,
            rpn_cls: 0.0,
            rpn_reg: 0.0,
            det_cls: 0.0,
            det_reg: 0.0,
        };
        let mut grads = Gradients::zeros_like(&model);
        for r in results {
            let (e, g) = r.map_err(|e| match e {
                DetectorError::Rpn(RpnError::Geometry(GeometryError::Numeric(_)))
                | DetectorError::Geometry(GeometryError::Numeric(_)) => DetectorError::NonFinite {
                    iteration: it,
                    component: "box regression output".into(),
                },
                other => other,
            })?;
            entry.add(&e);
            grads.accumulate(&g);
        }
        let inv = 1.0 / batch as f64;
        for v in [
            &mut entry.total,
            &mut entry.rpn_cls,
            &mut entry.rpn_reg,
            &mut entry.det_cls,
            &mut entry.det_reg,
        ] {
            *v *= inv;
        }
        if let Some(component) = entry.first_non_finite() {
            return Err(DetectorError::NonFinite {
                iteration: it,
                component: component.into(),
            });
        }
        grads.scale(inv as f32);
        for ((g, p), &fz) in grads.tensors.iter_mut().zip(model.params()).zip(&frozen) {
            if fz {
                g.iter_mut().for_each(|v| *v = 0.0);
            } else if config.weight_decay > 0.0 {
                let wd = config.weight_decay as f32;
                for (gv, &pv) in g.iter_mut().zip(p.data()) {
                    *gv += wd * pv;
                }
            }
        }
        if !grads.all_finite() {
            return Err(DetectorError::NonFinite {
                iteration: it,
                component: "gradient".into(),
            });
        }
        if let Some(clip) = config.grad_clip {
            let norm = grads.l2_norm();
            if norm > clip {
                grads.scale((clip / norm) as f32);
            }
        }
        let mut params = model.params_mut();
        for (p, g) in params.iter_mut().zip(grads.tensors) {
            p.set_grad(g)?;
        }
        sgd.step(&mut params, config.lr_scale(it))?;
        if !model.all_finite() {
            return Err(DetectorError::NonFinite {
                iteration: it,
                component: "parameters".into(),
            });
        }
        log.push(entry);
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0 {
                let path = dir.join(format!("checkpoint_{:06}.tkad", it + 1));
                save_model(&model, &path)?;
                checkpoints.push(path);
            }
        }
    }
    Ok(TrainOutcome {
        model,
        log,
        checkpoints,
    })
}
