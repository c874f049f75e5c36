//! Per-frame detection latency of the desk-size model (untrained weights
//! cost the same as trained ones).
//!
//!     cargo run --release --example bench_latency -- [frames]

use tka_detect::detector::{DetectConfig, DetectorModel, ModelConfig};
use tka_detect::eval::bench::REFERENCE_LATENCY_S;
use tka_detect::eval::benchmark_latency;
use tka_detect::tensor::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args().nth(1).map_or(Ok(20), |s| s.parse())?;
    let config = ModelConfig::default();
    let names = (0..8).map(|k| format!("tool {k}")).collect();
    let model = DetectorModel::init(config.clone(), names, 0)?;
    let (w, h) = (config.backbone.input_w, config.backbone.input_h);
    let frames: Vec<Tensor> = (0..n + 2)
        .map(|i| {
            let v = (0..3 * w * h).map(|p| ((p * 7 + i * 13) % 255) as f32 / 255.0).collect();
            Tensor::new(&[3, h, w], v).unwrap()
        })
        .collect();
    let stats = benchmark_latency(&model, &frames, 2, &DetectConfig::default())?;
    println!(
        "{} parameters, {w}x{h} input: mean {:.4} s, median {:.4} s over {} frames (published reference {} s)",
        model.parameter_count(),
        stats.mean_s,
        stats.median_s,
        stats.samples.len(),
        REFERENCE_LATENCY_S
    );
    Ok(())
}
