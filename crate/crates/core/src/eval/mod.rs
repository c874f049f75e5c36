//! Detection metrics, leave-one-video-out cross-validation, latency
//! benchmarking and report emission.

pub mod bench;
pub mod dump;
pub mod loocv;
pub mod metrics;
pub mod report;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{parse_voc_xml, DataError, DatasetManifest, ImageLoader};
use crate::detector::{forward_detect, DetectConfig, Detection, DetectorError, DetectorModel};

pub use bench::{benchmark_latency, LatencyStats};
pub use dump::{detections_from_dump, read_dump, write_dump, DumpRecord};
pub use loocv::{loocv_run, Fold, FoldPlan};
pub use metrics::{
    average_precision, confusion_matrix, match_detections, mean_ap, pr_curve, DetOutcome,
    FrameTruth, MatchResult, PrPoint, ScoredOutcome,
};
pub use report::{emit_report, format_table, read_report};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io {
        path: String,
        kind: std::io::ErrorKind,
        message: String,
    },
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl EvalError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            kind: err.kind(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApInterpolation {
    #[default]
    AllPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou_match_threshold: f64,
    pub ap_interpolation: ApInterpolation,
    /// Detections below this score are left out of the confusion matrix
    /// (AP always uses every detection).
    pub confusion_min_score: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_match_threshold: 0.5,
            ap_interpolation: ApInterpolation::AllPoints,
            confusion_min_score: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_match_threshold > 0.0 && self.iou_match_threshold < 1.0) {
            return Err(EvalError::Config("iou_match_threshold must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.confusion_min_score) {
            return Err(EvalError::Config("confusion_min_score must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_name: String,
    /// `None` when the class has no ground truth in the evaluated frames.
    pub ap: Option<f64>,
    pub gt_count: usize,
    pub detection_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub held_out_video: String,
    pub train_videos: Vec<String>,
    pub seed: u64,
    pub per_class_ap: Vec<Option<f64>>,
    pub map_value: Option<f64>,
    pub final_loss: Option<f64>,
}

/// Evaluation summary. `min_ap`/`max_ap` are the extreme per-class APs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub per_class: Vec<ClassAp>,
    pub map_value: f64,
    pub min_ap: f64,
    pub max_ap: f64,
    pub iou_match_threshold: f64,
    /// `(C+1)×(C+1)`; the last row/column is background / missed.
    pub confusion: Vec<Vec<u64>>,
    pub frames_evaluated: usize,
    pub mean_latency_s: Option<f64>,
    pub median_latency_s: Option<f64>,
    /// Per-class precision/recall curves, indexed like `class_names`.
    pub pr_curves: Vec<Vec<PrPoint>>,
    pub folds: Vec<FoldReport>,
}

/// Mean and median of a sample; `None` for an empty slice.
pub fn mean_median(samples: &[f64]) -> Option<(f64, f64)> {
    if samples.is_empty() {
        return None;
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    Some((mean, median))
}

/// Per-class APs and ground-truth counts for one set of frames.
pub(crate) fn per_class_ap(
    detections: &[Vec<Detection>],
    truths: &[FrameTruth],
    num_classes: usize,
    config: &EvalConfig,
) -> Result<(Vec<Option<f64>>, Vec<Vec<ScoredOutcome>>, Vec<usize>)> {
    let matches = match_detections(detections, truths, config.iou_match_threshold)?;
    let (outcomes, gt_counts) = metrics::class_outcomes(detections, truths, &matches, num_classes);
    let aps = outcomes
        .iter()
        .zip(&gt_counts)
        .map(|(o, &n)| average_precision(o, n))
        .collect();
    Ok((aps, outcomes, gt_counts))
}

pub(crate) fn confident(detections: &[Vec<Detection>], min_score: f64) -> Vec<Vec<Detection>> {
    detections
        .iter()
        .map(|f| f.iter().copied().filter(|d| d.score >= min_score).collect())
        .collect()
}

/// Scores detections against ground truth frame by frame.
pub fn evaluate_frames(
    class_names: &[String],
    detections: &[Vec<Detection>],
    truths: &[FrameTruth],
    latencies: &[f64],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let c = class_names.len();
    let (aps, outcomes, gt_counts) = per_class_ap(detections, truths, c, config)?;
    let (map_value, min_ap, max_ap) = mean_ap(&aps)?;
    let confusion = confusion_matrix(
        &confident(detections, config.confusion_min_score),
        truths,
        c,
        config.iou_match_threshold,
    )?;
    let latency = mean_median(latencies);
    Ok(EvalReport {
        class_names: class_names.to_vec(),
        per_class: class_names
            .iter()
            .enumerate()
            .map(|(k, name)| ClassAp {
                class_name: name.clone(),
                ap: aps[k],
                gt_count: gt_counts[k],
                detection_count: outcomes[k].len(),
            })
            .collect(),
        map_value,
        min_ap,
        max_ap,
        iou_match_threshold: config.iou_match_threshold,
        confusion,
        frames_evaluated: truths.len(),
        mean_latency_s: latency.map(|l| l.0),
        median_latency_s: latency.map(|l| l.1),
        pr_curves: outcomes
            .iter()
            .zip(&gt_counts)
            .map(|(o, &n)| pr_curve(o, n))
            .collect(),
        folds: Vec::new(),
    })
}

/// Ground truth of every manifest frame, in manifest order, read from the
/// annotations alone.
pub fn load_truths(manifest: &DatasetManifest, root: &Path) -> Result<Vec<FrameTruth>> {
    let mut out = Vec::with_capacity(manifest.frame_count());
    for video in &manifest.videos {
        for frame in &video.frames {
            let path = root.join(&frame.annotation);
            let text = std::fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
            let ann = parse_voc_xml(&text)?;
            let mut truth = FrameTruth::default();
            for o in &ann.objects {
                let c = manifest.class_index(&o.class_name).ok_or_else(|| {
                    DataError::Consistency(format!("{}: unknown class {:?}", frame.annotation, o.class_name))
                })?;
                truth.boxes.push(o.bbox);
                truth.classes.push(c);
            }
            out.push(truth);
        }
    }
    Ok(out)
}

/// Detections and latency for one frame of a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub video_id: String,
    pub frame: String,
    pub detections: Vec<Detection>,
    pub latency_s: f64,
}

/// Runs the detector over every frame of `manifest` in order.
pub fn detect_manifest(
    model: &DetectorModel,
    manifest: &DatasetManifest,
    root: &Path,
    config: &DetectConfig,
) -> Result<Vec<FrameDetections>> {
    if model.class_names != manifest.class_names {
        return Err(EvalError::Config(format!(
            "model classes {:?} differ from manifest classes {:?}",
            model.class_names, manifest.class_names
        )));
    }
    let loader = ImageLoader::default();
    let mut out = Vec::with_capacity(manifest.frame_count());
    for video in &manifest.videos {
        for frame in &video.frames {
            let image = loader.load(&root.join(&frame.image))?;
            let (detections, latency_s) = forward_detect(model, &image, config)?;
            out.push(FrameDetections {
                video_id: video.video_id.clone(),
                frame: frame.image.clone(),
                detections,
                latency_s,
            });
        }
    }
    Ok(out)
}

/// Detects and evaluates in one go.
pub fn evaluate_model(
    model: &DetectorModel,
    manifest: &DatasetManifest,
    root: &Path,
    detect: &DetectConfig,
    config: &EvalConfig,
) -> Result<(EvalReport, Vec<FrameDetections>)> {
    let frames = detect_manifest(model, manifest, root, detect)?;
    let truths = load_truths(manifest, root)?;
    let dets: Vec<Vec<Detection>> = frames.iter().map(|f| f.detections.clone()).collect();
    let lat: Vec<f64> = frames.iter().map(|f| f.latency_s).collect();
    let report = evaluate_frames(&manifest.class_names, &dets, &truths, &lat, config)?;
    Ok((report, frames))
}
