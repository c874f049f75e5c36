//! Run a trained checkpoint over frames and print its detections.
//!
//!     cargo run --release --example train_tiny
//!     cargo run --release --example detect_frames -- target/train_tiny/model.tkad target/train_tiny/data/video_00/frame_0000.ppm

use std::path::PathBuf;

use tka_detect::data::load_image;
use tka_detect::detector::{forward_detect, load_model, DetectConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let model_path = PathBuf::from(args.next().unwrap_or_else(|| "target/train_tiny/model.tkad".into()));
    let frames: Vec<PathBuf> = args.map(PathBuf::from).collect();
    let frames = if frames.is_empty() {
        vec![PathBuf::from("target/train_tiny/data/video_00/frame_0000.ppm")]
    } else {
        frames
    };

    let model = load_model(&model_path)?;
    let config = DetectConfig {
        score_threshold: 0.3,
        ..DetectConfig::default()
    };
    for path in frames {
        let image = load_image(&path)?;
        let (dets, secs) = forward_detect(&model, &image, &config)?;
        println!("{} ({:.1} ms)", path.display(), secs * 1e3);
        for d in dets {
            let b = d.bbox;
            println!(
                "  {:<24} {:.3}  [{:.1} {:.1} {:.1} {:.1}]",
                model.class_names[d.class_id], d.score, b.x_min, b.y_min, b.x_max, b.y_max
            );
        }
    }
    Ok(())
}
