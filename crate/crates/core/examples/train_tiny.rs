//! Train a small detector on a handful of synthetic frames, write the
//! loss log and a checkpoint.
//!
//!     cargo run --release --example train_tiny -- [out_dir] [iterations]

use std::path::PathBuf;

use tka_detect::data::{synth_generate, SynthConfig};
use tka_detect::detector::{save_model, train, write_log_csv, ManifestSource, ModelConfig, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/train_tiny".into()));
    let iterations: usize = args.next().map_or(Ok(300), |s| s.parse())?;

    let synth = SynthConfig {
        n_videos: 2,
        frames_per_video: 10,
        ..SynthConfig::desk_easy()
    };
    let manifest = synth_generate(&synth, &out.join("data"))?;
    let model_config = ModelConfig::default();
    let mut config = TrainConfig::default();
    config.sgd.iterations = iterations;
    config.lr_steps = vec![iterations * 3 / 4];
    config.warmup_iterations = iterations / 10;
    config.checkpoint_every = iterations / 2;

    let source = ManifestSource::new(
        manifest.clone(),
        &out.join("data"),
        model_config.backbone.input_w,
        model_config.backbone.input_h,
    );
    let ckpt = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt)?;
    let outcome = train(&source, manifest.class_names, model_config, &config, Some(&ckpt))?;

    for e in outcome.log.iter().step_by((iterations / 10).max(1)) {
        println!(
            "iter {:4}  lr {:.5}  total {:.4}  (rpn {:.3}/{:.3}, head {:.3}/{:.3})",
            e.iteration, e.learning_rate, e.total, e.rpn_cls, e.rpn_reg, e.det_cls, e.det_reg
        );
    }
    let mut csv = Vec::new();
    write_log_csv(&outcome.log, &mut csv)?;
    std::fs::write(out.join("train_log.csv"), csv)?;
    save_model(&outcome.model, &out.join("model.tkad"))?;
    println!("checkpoints: {:?}", outcome.checkpoints);
    println!("{} parameters -> {}", outcome.model.parameter_count(), out.join("model.tkad").display());
    Ok(())
}
