//! The two-stage detector: backbone, region proposal head, RoI pooling and
//! the per-class detection head, with training, inference and checkpoints.

pub mod augment;
pub mod checkpoint;
pub mod forward;
pub mod infer;
pub mod model;
pub mod roi;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::geometry::{BBox, GeometryError};
use crate::rpn::{ProposalConfig, RpnError, RpnLossConfig};
use crate::tensor::{SgdConfig, TensorError};

pub use augment::flip_horizontal;
pub use checkpoint::{load_model, model_from_bytes, model_to_bytes, save_model, CHECKPOINT_VERSION};
pub use infer::{forward_detect, DetectConfig};
pub use model::{BackboneConfig, DetectorModel, ModelConfig};
pub use roi::{roi_pool, roi_pool_backward, PooledRoi};
pub use train::{
    train, write_log_csv, LogEntry, ManifestSource, SampleSource, TrainOutcome, TrainSample,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("region {0:?} maps to an empty feature window")]
    DegenerateRoi(BBox),
    #[error("checkpoint format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("checkpoint version {found} is not supported (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("non-finite {component} at iteration {iteration}")]
    NonFinite { iteration: usize, component: String },
    #[error("{path}: {message}")]
    Io {
        path: String,
        kind: std::io::ErrorKind,
        message: String,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Rpn(#[from] RpnError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl DetectorError {
    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            kind: err.kind(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, DetectorError>;

/// One detected object in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Index into the model's class table (background is never emitted).
    pub class_id: usize,
    pub score: f64,
    pub bbox: BBox,
}

/// Everything the training loop needs besides data and model shape.
///
/// Learning rate, momentum, schedule, weight decay and clipping defaults
/// are our own choices, tuned for the synthetic desk profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub sgd: SgdConfig,
    pub rpn: RpnLossConfig,
    pub proposals: ProposalConfig,
    pub rois_per_image: usize,
    /// Fraction of sampled regions drawn from the foreground pool.
    pub fg_fraction: f64,
    /// IoU with a ground-truth box at which a region counts as foreground.
    pub fg_iou: f64,
    pub det_cls_weight: f64,
    pub det_reg_weight: f64,
    /// Random horizontal flips with probability 0.5.
    pub augment: bool,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
    /// Linear learning-rate ramp over the first iterations.
    pub warmup_iterations: usize,
    /// Iterations at which the learning rate is multiplied by `lr_gamma`.
    pub lr_steps: Vec<usize>,
    pub lr_gamma: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling.
    pub grad_clip: Option<f64>,
    /// Parameter-name prefixes to update; empty trains everything.
    pub trainable: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sgd: SgdConfig {
                learning_rate: 0.01,
                momentum: 0.9,
                iterations: 2000,
                batch_size: 1,
            },
            rpn: RpnLossConfig::default(),
            proposals: ProposalConfig::default(),
            rois_per_image: 32,
            fg_fraction: 0.25,
            fg_iou: 0.5,
            det_cls_weight: 1.0,
            det_reg_weight: 1.0,
            augment: true,
            seed: 0,
            checkpoint_every: 0,
            warmup_iterations: 100,
            lr_steps: vec![1500],
            lr_gamma: 0.1,
            weight_decay: 1e-4,
            grad_clip: Some(10.0),
            trainable: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sgd.validate().map_err(|m| DetectorError::Config(format!("sgd: {m}")))?;
        self.rpn.validate()?;
        self.proposals.validate()?;
        let bad = |m: &str| Err(DetectorError::Config(m.to_string()));
        if self.rois_per_image == 0 {
            return bad("rois_per_image must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.fg_fraction) {
            return bad("fg_fraction must be in [0, 1]");
        }
        if !(self.fg_iou > 0.0 && self.fg_iou <= 1.0) {
            return bad("fg_iou must be in (0, 1]");
        }
        if !(self.det_cls_weight >= 0.0 && self.det_reg_weight >= 0.0) {
            return bad("detection loss weights must be >= 0");
        }
        if !(self.lr_gamma > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr_gamma must be > 0 and weight_decay >= 0");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be > 0");
        }
        Ok(())
    }

    /// Learning-rate multiplier at a (zero-based) iteration.
    pub fn lr_scale(&self, iteration: usize) -> f64 {
        let warm = if iteration < self.warmup_iterations {
            (iteration + 1) as f64 / self.warmup_iterations as f64
        } else {
            1.0
        };
        let drops = self.lr_steps.iter().filter(|&&s| iteration >= s).count();
        warm * self.lr_gamma.powi(drops as i32)
    }
}
