//! Render a small synthetic desk dataset (VOC annotations + PPM frames)
//! and read it back through the manifest.
//!
//!     cargo run --example synth_dataset -- [out_dir]

use std::path::PathBuf;

use tka_detect::data::{load_all_frames, load_manifest, synth_generate, validate_manifest, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/synth_dataset".into()));
    let config = SynthConfig {
        n_videos: 3,
        frames_per_video: 4,
        ..SynthConfig::desk_easy()
    };
    synth_generate(&config, &out)?;

    let manifest = load_manifest(&out.join("manifest.json"))?;
    let issues = validate_manifest(&manifest, &out);
    println!("{} videos, {} frames, {} issues", manifest.videos.len(), manifest.frame_count(), issues.len());
    println!("classes: {}", manifest.class_names.join(", "));

    for frame in load_all_frames(&manifest, &out)?.iter().take(4) {
        let objs: Vec<String> = frame
            .annotation
            .objects
            .iter()
            .map(|o| {
                let b = o.bbox;
                format!("{} [{:.0} {:.0} {:.0} {:.0}]", o.class_name, b.x_min, b.y_min, b.x_max, b.y_max)
            })
            .collect();
        println!("{:<28} {}", frame.image_path, objs.join("; "));
    }
    Ok(())
}
