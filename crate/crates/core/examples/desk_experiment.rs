//! Synthesize the easy desk dataset, train on 12 videos, evaluate on the
//! other 4.
//!
//!     cargo run --release --example desk_experiment -- [out_dir] [iterations]

use std::path::PathBuf;
use std::time::Instant;

use tka_detect::data::{synth_generate, SynthConfig};
use tka_detect::detector::{train, DetectConfig, ManifestSource, ModelConfig, TrainConfig};
use tka_detect::eval::{evaluate_model, format_table, EvalConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/desk_experiment".into()));
    let iterations: usize = args.next().map_or(Ok(2000), |s| s.parse())?;
    let lr: f64 = args.next().map_or(Ok(0.01), |s| s.parse())?;

    let data_dir = out.join("data");
    let manifest = synth_generate(&SynthConfig::desk_easy(), &data_dir)?;
    let ids: Vec<String> = manifest.videos.iter().map(|v| v.video_id.clone()).collect();
    let (train_ids, test_ids) = ids.split_at(12);

    let model_config = ModelConfig::default();
    let mut config = TrainConfig::default();
    config.sgd.iterations = iterations;
    config.sgd.learning_rate = lr;
    config.lr_steps = vec![iterations * 3 / 4];
    let source = ManifestSource::new(
        manifest.subset(train_ids),
        &data_dir,
        model_config.backbone.input_w,
        model_config.backbone.input_h,
    );
    let start = Instant::now();
    let outcome = train(&source, manifest.class_names.clone(), model_config, &config, None)?;
    for chunk in outcome.log.chunks(100) {
        let n = chunk.len() as f64;
        let mean = |f: fn(&tka_detect::detector::LogEntry) -> f64| chunk.iter().map(f).sum::<f64>() / n;
        println!(
            "iter {:5}  total {:.4}  rpn_cls {:.4}  rpn_reg {:.4}  det_cls {:.4}  det_reg {:.4}",
            chunk[0].iteration,
            mean(|e| e.total),
            mean(|e| e.rpn_cls),
            mean(|e| e.rpn_reg),
            mean(|e| e.det_cls),
            mean(|e| e.det_reg)
        );
    }
    println!("trained {iterations} iterations in {:.1} s", start.elapsed().as_secs_f64());

    let (report, _) = evaluate_model(
        &outcome.model,
        &manifest.subset(test_ids),
        &data_dir,
        &DetectConfig::default(),
        &EvalConfig::default(),
    )?;
    print!("{}", format_table(&report));
    Ok(())
}
