//! Leave-one-video-out cross-validation on a three-video synthetic set
//! with a short training schedule.
//!
//!     cargo run --release --example loocv_small -- [out_dir] [iterations] [jobs]

use std::path::PathBuf;

use tka_detect::data::{synth_generate, SynthConfig};
use tka_detect::detector::{DetectConfig, ModelConfig, TrainConfig};
use tka_detect::eval::{format_table, loocv_run, EvalConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/loocv_small".into()));
    let iterations: usize = args.next().map_or(Ok(150), |s| s.parse())?;
    let jobs: usize = args.next().map_or(Ok(1), |s| s.parse())?;

    let synth = SynthConfig {
        n_videos: 3,
        frames_per_video: 8,
        n_classes: 4,
        ..SynthConfig::desk_easy()
    };
    let manifest = synth_generate(&synth, &out)?;
    let mut train = TrainConfig::default();
    train.sgd.iterations = iterations;
    train.lr_steps = vec![iterations * 3 / 4];
    train.warmup_iterations = iterations / 10;

    let report = loocv_run(
        &manifest,
        &out,
        &ModelConfig::default(),
        &train,
        &DetectConfig::default(),
        &EvalConfig::default(),
        jobs,
        &|f| eprintln!("fold {} done: held out {}, mAP {:?}", f.fold, f.held_out_video, f.map_value),
    )?;
    print!("{}", format_table(&report));
    Ok(())
}
