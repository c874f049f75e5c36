//! Score hand-written detections: matching, PR curve, AP, confusion
//! matrix, and the report files.
//!
//!     cargo run --example evaluate_dump -- [out_dir]

use std::path::PathBuf;

use tka_detect::detector::Detection;
use tka_detect::eval::{emit_report, evaluate_frames, format_table, EvalConfig, FrameTruth};
use tka_detect::geometry::BBox;

fn det(class_id: usize, score: f64, b: [f64; 4]) -> Detection {
    Detection {
        class_id,
        score,
        bbox: BBox::new(b[0], b[1], b[2], b[3]),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/evaluate_dump".into()));
    let names = vec!["scalpel".to_string(), "saw blade".to_string()];
    let truths = vec![
        FrameTruth {
            boxes: vec![BBox::new(10., 10., 50., 50.), BBox::new(100., 20., 160., 80.)],
            classes: vec![0, 1],
        },
        FrameTruth {
            boxes: vec![BBox::new(30., 40., 70., 90.)],
            classes: vec![0],
        },
    ];
    let detections = vec![
        vec![
            det(0, 0.95, [12., 11., 51., 49.]),
            det(0, 0.60, [11., 12., 50., 52.]), // duplicate: false positive
            det(0, 0.70, [98., 22., 161., 79.]), // right place, wrong class
        ],
        vec![det(0, 0.80, [28., 41., 69., 88.]), det(1, 0.40, [200., 100., 230., 140.])],
    ];
    let report = evaluate_frames(&names, &detections, &truths, &[0.031, 0.029], &EvalConfig::default())?;
    print!("{}", format_table(&report));
    println!("\nscalpel PR curve:");
    for p in &report.pr_curves[0] {
        println!("  recall {:.3} precision {:.3} score {:?}", p.recall, p.precision, p.score);
    }
    println!("\nconfusion (rows: true, columns: predicted, last = background):");
    for row in &report.confusion {
        println!("  {row:?}");
    }
    for f in emit_report(&report, &out)? {
        println!("wrote {}", f.display());
    }
    Ok(())
}
