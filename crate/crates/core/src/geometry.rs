//! Axis-aligned box arithmetic: IoU, anchor grids, the center/log-size
//! regression encoding, clipping and greedy non-maximum suppression.
//!
//! Coordinates are continuous, zero-based and half-open: a box spans
//! `[x_min, x_max) × [y_min, y_max)` and its width is `x_max − x_min`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("anchor has zero width or height: {0:?}")]
    DegenerateAnchor(BBox),
    #[error("target has zero width or height: {0:?}")]
    DegenerateTarget(BBox),
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Builds a box, swapping coordinates if they arrive reversed.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min: x_min.min(x_max),
            y_min: y_min.min(y_max),
            x_max: x_max.max(x_min),
            y_max: y_max.max(y_min),
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_max >= self.x_min
            && self.y_max >= self.y_min
    }

    pub fn is_inside(&self, image_w: f64, image_h: f64) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= image_w && self.y_max <= image_h
    }

    pub fn scale(&self, sx: f64, sy: f64) -> Self {
        Self::new(
            self.x_min * sx,
            self.y_min * sy,
            self.x_max * sx,
            self.y_max * sy,
        )
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

/// Regression offsets of a box relative to an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxDelta {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl BoxDelta {
    pub fn new(tx: f64, ty: f64, tw: f64, th: f64) -> Self {
        Self { tx, ty, tw, th }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Caps the log-size terms so that decoding cannot overflow.
    pub fn clamped(&self) -> Self {
        Self::new(
            self.tx,
            self.ty,
            self.tw.min(MAX_LOG_SCALE),
            self.th.min(MAX_LOG_SCALE),
        )
    }
}

/// Upper bound applied to predicted `tw`/`th` before decoding network output.
pub const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Reference boxes laid out over a feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorGrid {
    pub feature_h: usize,
    pub feature_w: usize,
    pub stride: f64,
    /// Anchor side lengths in pixels (square-root of anchor area).
    pub scales: Vec<f64>,
    /// Height / width ratios.
    pub aspect_ratios: Vec<f64>,
    pub image_w: f64,
    pub image_h: f64,
}

impl AnchorGrid {
    pub fn anchors_per_cell(&self) -> usize {
        self.scales.len() * self.aspect_ratios.len()
    }

    pub fn len(&self) -> usize {
        self.feature_h * self.feature_w * self.anchors_per_cell()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.aspect_ratios.is_empty() {
            return Err(GeometryError::Config(
                "anchor grid needs at least one scale and one aspect ratio".into(),
            ));
        }
        if self.feature_h == 0 || self.feature_w == 0 {
            return Err(GeometryError::Config("feature map must be non-empty".into()));
        }
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        if !positive(&self.stride)
            || !self.scales.iter().all(positive)
            || !self.aspect_ratios.iter().all(positive)
        {
            return Err(GeometryError::Config(
                "stride, scales and aspect ratios must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Emits anchors in row-major cell order, then scale, then ratio.
/// Anchors crossing the image border are kept; see [`cross_boundary_flags`].
pub fn generate_anchors(grid: &AnchorGrid) -> Result<Vec<BBox>> {
    grid.validate()?;
    let mut shapes = Vec::with_capacity(grid.anchors_per_cell());
    for &s in &grid.scales {
        for &r in &grid.aspect_ratios {
            let root = r.sqrt();
            shapes.push((s / root, s * root));
        }
    }
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..grid.feature_h {
        for j in 0..grid.feature_w {
            let cx = (j as f64 + 0.5) * grid.stride;
            let cy = (i as f64 + 0.5) * grid.stride;
            for &(w, h) in &shapes {
                out.push(BBox::from_center(cx, cy, w, h));
            }
        }
    }
    Ok(out)
}

/// `true` for anchors that extend past the image border.
pub fn cross_boundary_flags(anchors: &[BBox], image_w: f64, image_h: f64) -> Vec<bool> {
    anchors
        .iter()
        .map(|a| !a.is_inside(image_w, image_h))
        .collect()
}

pub fn encode(anchor: &BBox, target: &BBox) -> Result<BoxDelta> {
    if !(anchor.width() > 0.0 && anchor.height() > 0.0) {
        return Err(GeometryError::DegenerateAnchor(*anchor));
    }
    if !(target.width() > 0.0 && target.height() > 0.0) {
        return Err(GeometryError::DegenerateTarget(*target));
    }
    let (ax, ay) = anchor.center();
    let (tx, ty) = target.center();
    Ok(BoxDelta {
        tx: (tx - ax) / anchor.width(),
        ty: (ty - ay) / anchor.height(),
        tw: (target.width() / anchor.width()).ln(),
        th: (target.height() / anchor.height()).ln(),
    })
}

pub fn decode(anchor: &BBox, delta: &BoxDelta) -> Result<BBox> {
    if !(anchor.width() > 0.0 && anchor.height() > 0.0) {
        return Err(GeometryError::DegenerateAnchor(*anchor));
    }
    if !delta.is_finite() {
        return Err(GeometryError::Numeric(format!("delta {delta:?}")));
    }
    let (ax, ay) = anchor.center();
    let cx = ax + delta.tx * anchor.width();
    let cy = ay + delta.ty * anchor.height();
    let w = anchor.width() * delta.tw.exp();
    let h = anchor.height() * delta.th.exp();
    let out = BBox::from_center(cx, cy, w, h);
    if !out.is_valid() || w <= 0.0 || h <= 0.0 {
        return Err(GeometryError::Numeric(format!(
            "decoding {delta:?} against {anchor:?} overflowed"
        )));
    }
    Ok(out)
}

pub fn clip_box(b: &BBox, image_w: f64, image_h: f64) -> BBox {
    let cx = |v: f64| v.clamp(0.0, image_w);
    let cy = |v: f64| v.clamp(0.0, image_h);
    BBox {
        x_min: cx(b.x_min),
        y_min: cy(b.y_min),
        x_max: cx(b.x_max).max(cx(b.x_min)),
        y_max: cy(b.y_max).max(cy(b.y_min)),
    }
}

/// Indices sorted by descending score; equal scores keep ascending index.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Greedy non-maximum suppression. Returns kept indices by descending score.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_threshold: f64) -> Result<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(GeometryError::Dimension(format!(
            "{} boxes but {} scores",
            boxes.len(),
            scores.len()
        )));
    }
    let order = rank_by_score(scores);
    let mut suppressed = vec![false; boxes.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&boxes[i], &boxes[j]) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    Ok(keep)
}
