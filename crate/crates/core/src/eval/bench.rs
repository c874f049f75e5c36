use serde::{Deserialize, Serialize};

use crate::detector::{forward_detect, DetectConfig, DetectorModel};
use crate::tensor::Tensor;

use super::{mean_median, EvalError, Result};

/// Published per-frame detection time the desk numbers are shown against.
pub const REFERENCE_LATENCY_S: f64 = 0.075;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_s: f64,
    pub median_s: f64,
    pub samples: Vec<f64>,
    pub warmup: usize,
}

/// Times `forward_detect` on each frame, discarding the first `warmup`.
pub fn benchmark_latency(
    model: &DetectorModel,
    frames: &[Tensor],
    warmup: usize,
    config: &DetectConfig,
) -> Result<LatencyStats> {
    if frames.is_empty() {
        return Err(EvalError::Config("no frames to benchmark".into()));
    }
    if warmup >= frames.len() {
        return Err(EvalError::Config(format!(
            "warmup count {warmup} leaves no timed frames out of {}",
            frames.len()
        )));
    }
    let mut samples = Vec::with_capacity(frames.len() - warmup);
    for (i, frame) in frames.iter().enumerate() {
        let (_, t) = forward_detect(model, frame, config)?;
        if i >= warmup {
            samples.push(t);
        }
    }
    let (mean_s, median_s) = mean_median(&samples).expect("non-empty");
    Ok(LatencyStats {
        mean_s,
        median_s,
        samples,
        warmup,
    })
}
