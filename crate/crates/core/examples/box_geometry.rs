//! Anchors, box regression targets, IoU and non-maximum suppression.
//!
//!     cargo run --example box_geometry

use tka_detect::detector::ModelConfig;
use tka_detect::geometry::{cross_boundary_flags, decode, encode, generate_anchors, iou, nms, BBox};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = ModelConfig::default().anchor_grid();
    let anchors = generate_anchors(&grid)?;
    let crossing = cross_boundary_flags(&anchors, grid.image_w, grid.image_h);
    println!(
        "{}x{} feature map, {} anchors/cell -> {} anchors ({} cross the border)",
        grid.feature_w,
        grid.feature_h,
        grid.anchors_per_cell(),
        anchors.len(),
        crossing.iter().filter(|&&c| c).count()
    );
    // the nine shapes centred on one cell
    let cell = (grid.feature_h / 2 * grid.feature_w + grid.feature_w / 2) * grid.anchors_per_cell();
    for a in &anchors[cell..cell + grid.anchors_per_cell()] {
        println!("  {:6.1} x {:6.1}", a.width(), a.height());
    }

    let anchor = BBox::new(100., 100., 164., 164.);
    let target = BBox::new(110., 90., 190., 150.);
    let delta = encode(&anchor, &target)?;
    println!("\nencode -> tx {:.4} ty {:.4} tw {:.4} th {:.4}", delta.tx, delta.ty, delta.tw, delta.th);
    println!("decode -> {:?}", decode(&anchor, &delta)?);
    println!("iou(anchor, target) = {:.4}", iou(&anchor, &target));

    let boxes = [
        BBox::new(10., 10., 50., 50.),
        BBox::new(12., 12., 52., 52.),
        BBox::new(60., 10., 100., 50.),
        BBox::new(11., 9., 49., 51.),
    ];
    let scores = [0.9, 0.8, 0.7, 0.95];
    println!("\nnms(0.5) keeps {:?}", nms(&boxes, &scores, 0.5)?);
    Ok(())
}
