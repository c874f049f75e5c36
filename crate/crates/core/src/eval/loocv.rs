//! Leave-one-video-out cross-validation.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DatasetManifest;
use crate::detector::train::ManifestSource;
use crate::detector::{train, DetectConfig, Detection, ModelConfig, TrainConfig};

use super::{
    confident, confusion_matrix, detect_manifest, load_truths, mean_ap, mean_median,
    per_class_ap, pr_curve, ClassAp, EvalConfig, EvalError, EvalReport, FoldReport, FrameTruth,
    Result, ScoredOutcome,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub held_out_video_id: String,
    pub train_video_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    /// One fold per video, in the given order.
    pub fn leave_one_video_out(video_ids: &[String]) -> Result<Self> {
        if video_ids.len() < 2 {
            return Err(EvalError::Config(format!(
                "cross-validation needs at least 2 videos, got {}",
                video_ids.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = video_ids.iter().find(|v| !seen.insert(*v)) {
            return Err(EvalError::Config(format!("duplicate video id {dup:?}")));
        }
        let folds = video_ids
            .iter()
            .map(|held| Fold {
                held_out_video_id: held.clone(),
                train_video_ids: video_ids.iter().filter(|v| *v != held).cloned().collect(),
            })
            .collect();
        Ok(Self { folds })
    }

    /// Checks the structural contract against the full video list.
    pub fn check(&self, video_ids: &[String]) -> Result<()> {
        if self.folds.len() != video_ids.len() {
            return Err(EvalError::Config(format!(
                "{} folds for {} videos",
                self.folds.len(),
                video_ids.len()
            )));
        }
        for v in video_ids {
            let held = self.folds.iter().filter(|f| &f.held_out_video_id == v).count();
            if held != 1 {
                return Err(EvalError::Config(format!("video {v:?} held out {held} times")));
            }
        }
        for (i, f) in self.folds.iter().enumerate() {
            if f.train_video_ids.contains(&f.held_out_video_id) {
                return Err(EvalError::Config(format!("fold {i} trains on its test video")));
            }
            if f.train_video_ids.len() + 1 != video_ids.len()
                || !video_ids
                    .iter()
                    .all(|v| v == &f.held_out_video_id || f.train_video_ids.contains(v))
            {
                return Err(EvalError::Config(format!("fold {i} does not cover every video")));
            }
        }
        Ok(())
    }
}

struct FoldOutput {
    report: FoldReport,
    detections: Vec<Vec<Detection>>,
    truths: Vec<FrameTruth>,
    latencies: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    k: usize,
    fold: &Fold,
    manifest: &DatasetManifest,
    root: &Path,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    detect: &DetectConfig,
    eval: &EvalConfig,
) -> Result<FoldOutput> {
    let seed = train_config.seed.wrapping_add(k as u64);
    let cfg = TrainConfig {
        seed,
        ..train_config.clone()
    };
    let train_set = manifest.subset(&fold.train_video_ids);
    let source = ManifestSource::new(
        train_set,
        root,
        model_config.backbone.input_w,
        model_config.backbone.input_h,
    );
    let outcome = train(&source, manifest.class_names.clone(), model_config.clone(), &cfg, None)?;
    let test_set = manifest.subset(std::slice::from_ref(&fold.held_out_video_id));
    let frames = detect_manifest(&outcome.model, &test_set, root, detect)?;
    let truths = load_truths(&test_set, root)?;
    let detections: Vec<Vec<Detection>> = frames.iter().map(|f| f.detections.clone()).collect();
    let (aps, _, _) = per_class_ap(&detections, &truths, manifest.class_names.len(), eval)?;
    let tail = &outcome.log[outcome.log.len().saturating_sub(100)..];
    Ok(FoldOutput {
        report: FoldReport {
            fold: k,
            held_out_video: fold.held_out_video_id.clone(),
            train_videos: fold.train_video_ids.clone(),
            seed,
            map_value: mean_ap(&aps).ok().map(|m| m.0),
            per_class_ap: aps,
            final_loss: (!tail.is_empty())
                .then(|| tail.iter().map(|e| e.total).sum::<f64>() / tail.len() as f64),
        },
        detections,
        truths,
        latencies: frames.iter().map(|f| f.latency_s).collect(),
    })
}

/// Trains on all videos but one, evaluates on the held-out video, for
/// every video. Fold `k` uses seed `train_config.seed + k`. A class's
/// reported AP is its mean over the folds whose held-out video contains
/// it. Folds run on up to `jobs` threads; results are combined in fold
/// order.
#[allow(clippy::too_many_arguments)]
pub fn loocv_run(
    manifest: &DatasetManifest,
    root: &Path,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    detect: &DetectConfig,
    eval: &EvalConfig,
    jobs: usize,
    on_fold: &(dyn Fn(&FoldReport) + Sync),
) -> Result<EvalReport> {
    eval.validate()?;
    let ids: Vec<String> = manifest.videos.iter().map(|v| v.video_id.clone()).collect();
    let plan = FoldPlan::leave_one_video_out(&ids)?;
    plan.check(&ids)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EvalError::Config(format!("thread pool: {e}")))?;
    let outputs: Vec<Result<FoldOutput>> = pool.install(|| {
        plan.folds
            .par_iter()
            .enumerate()
            .map(|(k, fold)| {
                let out = run_fold(k, fold, manifest, root, model_config, train_config, detect, eval)?;
                on_fold(&out.report);
                Ok(out)
            })
            .collect()
    });
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;

    let c = manifest.class_names.len();
    let mut per_class = Vec::with_capacity(c);
    let mut aps = Vec::with_capacity(c);
    let mut all_dets = Vec::new();
    let mut all_truths = Vec::new();
    let mut latencies = Vec::new();
    for o in &outputs {
        all_dets.extend(o.detections.iter().cloned());
        all_truths.extend(o.truths.iter().cloned());
        latencies.extend_from_slice(&o.latencies);
    }
    let (_, pooled, gt_counts) = per_class_ap(&all_dets, &all_truths, c, eval)?;
    for (k, name) in manifest.class_names.iter().enumerate() {
        let fold_aps: Vec<f64> = outputs.iter().filter_map(|o| o.report.per_class_ap[k]).collect();
        let ap = (!fold_aps.is_empty()).then(|| fold_aps.iter().sum::<f64>() / fold_aps.len() as f64);
        aps.push(ap);
        per_class.push(ClassAp {
            class_name: name.clone(),
            ap,
            gt_count: gt_counts[k],
            detection_count: pooled[k].len(),
        });
    }
    let (map_value, min_ap, max_ap) = mean_ap(&aps)?;
    let confusion = confusion_matrix(
        &confident(&all_dets, eval.confusion_min_score),
        &all_truths,
        c,
        eval.iou_match_threshold,
    )?;
    let latency = mean_median(&latencies);
    Ok(EvalReport {
        class_names: manifest.class_names.clone(),
        per_class,
        map_value,
        min_ap,
        max_ap,
        iou_match_threshold: eval.iou_match_threshold,
        confusion,
        frames_evaluated: all_truths.len(),
        mean_latency_s: latency.map(|l| l.0),
        median_latency_s: latency.map(|l| l.1),
        pr_curves: pooled
            .iter()
            .zip(&gt_counts)
            .map(|(o, &n): (&Vec<ScoredOutcome>, &usize)| pr_curve(o, n))
            .collect(),
        folds: outputs.into_iter().map(|o| o.report).collect(),
    })
}
