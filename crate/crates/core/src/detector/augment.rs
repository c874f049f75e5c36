use crate::geometry::BBox;
use crate::tensor::Tensor;

/// Mirrors a `C×H×W` image left-right together with its boxes.
pub fn flip_horizontal(image: &Tensor, boxes: &[BBox], image_w: f64) -> (Tensor, Vec<BBox>) {
    let [c, h, w] = [image.shape()[0], image.shape()[1], image.shape()[2]];
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for row in 0..c * h {
        out.extend(src[row * w..(row + 1) * w].iter().rev());
    }
    let flipped = boxes
        .iter()
        .map(|b| BBox {
            x_min: image_w - b.x_max,
            y_min: b.y_min,
            x_max: image_w - b.x_min,
            y_max: b.y_max,
        })
        .collect();
    (Tensor::new(&[c, h, w], out).expect("same shape"), flipped)
}
