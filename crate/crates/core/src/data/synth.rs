//! Deterministic "tool glyph" dataset generator.
//!
//! Each class is a flat-colored glyph whose shape family is `k mod 4`
//! (rectangle, disc, triangle, L-shape) and whose hue steps around the
//! color wheel by the golden angle. Each video gets its own background
//! tone, so held-out videos differ from the training ones. The output tree
//! holds one P6 image and one VOC XML file per frame plus `manifest.json`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::encode_ppm;
use super::manifest::{DatasetManifest, FrameEntry, VideoEntry};
use super::taxonomy::TKA_TOOL_NAMES;
use super::voc::{write_voc_xml, AnnotatedObject, Annotation};
use super::{DataError, Result};
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    /// Separated glyphs, mild aspect jitter, low noise.
    Easy,
    /// Overlapping glyphs, independent scale jitter per axis, shading, more noise.
    Cluttered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub image_w: usize,
    pub image_h: usize,
    pub n_classes: usize,
    /// Inclusive `[min, max]` number of glyphs per frame.
    pub glyphs_per_frame: [usize; 2],
    /// Inclusive `[min, max]` nominal glyph side in pixels.
    pub glyph_size: [usize; 2],
    /// Amplitude of uniform per-pixel noise, as a fraction of full scale.
    pub noise_level: f64,
    pub profile: Difficulty,
    pub seed: u64,
}

impl SynthConfig {
    pub fn desk_easy() -> Self {
        Self {
            n_videos: 16,
            frames_per_video: 30,
            image_w: 327,
            image_h: 240,
            n_classes: 8,
            glyphs_per_frame: [1, 2],
            glyph_size: [36, 72],
            noise_level: 0.03,
            profile: Difficulty::Easy,
            seed: 7,
        }
    }

    pub fn desk_cluttered() -> Self {
        Self {
            n_classes: 12,
            glyphs_per_frame: [2, 4],
            glyph_size: [28, 88],
            noise_level: 0.08,
            profile: Difficulty::Cluttered,
            ..Self::desk_easy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(DataError::Config(m));
        if self.n_classes == 0 {
            return err("n_classes must be >= 1".into());
        }
        if self.n_classes > MAX_GLYPH_CLASSES {
            return err(format!(
                "n_classes {} exceeds the {MAX_GLYPH_CLASSES} available glyph classes",
                self.n_classes
            ));
        }
        if self.n_videos == 0 || self.frames_per_video == 0 {
            return err("n_videos and frames_per_video must be >= 1".into());
        }
        let [gmin, gmax] = self.glyphs_per_frame;
        if gmin == 0 || gmin > gmax {
            return err("glyphs_per_frame must satisfy 1 <= min <= max".into());
        }
        let [smin, smax] = self.glyph_size;
        if smin < 8 || smin > smax {
            return err("glyph_size must satisfy 8 <= min <= max".into());
        }
        // the largest jittered side must still fit
        if (smax as f64 * MAX_JITTER).ceil() as usize >= self.image_w.min(self.image_h) {
            return err(format!(
                "glyph size {smax} does not fit a {}x{} image",
                self.image_w, self.image_h
            ));
        }
        if !(0.0..=0.5).contains(&self.noise_level) {
            return err("noise_level must be in [0, 0.5]".into());
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        TKA_TOOL_NAMES[..self.n_classes]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
}

const MAX_JITTER: f64 = 1.3;

/// Classes are limited by the named tool taxonomy.
pub const MAX_GLYPH_CLASSES: usize = TKA_TOOL_NAMES.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlyphShape {
    Rectangle,
    Disc,
    Triangle,
    LShape,
}

/// Shape family and RGB color of class `k`.
pub fn class_glyph(k: usize) -> (GlyphShape, [u8; 3]) {
    let shape = match k % 4 {
        0 => GlyphShape::Rectangle,
        1 => GlyphShape::Disc,
        2 => GlyphShape::Triangle,
        _ => GlyphShape::LShape,
    };
    let hue = (k as f64 * 137.507_764) % 360.0;
    (shape, hsv_to_rgb(hue, 0.85, 0.92))
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round() as u8)
}

/// Row-major coverage mask of a `w×h` glyph.
pub fn glyph_mask(shape: GlyphShape, w: usize, h: usize) -> Vec<bool> {
    let (wf, hf) = (w as f64, h as f64);
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let inside = match shape {
                GlyphShape::Rectangle => true,
                GlyphShape::Disc => {
                    let dx = (x as f64 + 0.5 - wf / 2.0) / (wf / 2.0);
                    let dy = (y as f64 + 0.5 - hf / 2.0) / (hf / 2.0);
                    dx * dx + dy * dy <= 1.0
                }
                GlyphShape::Triangle => {
                    // apex at top center, base along the bottom row
                    let half = (y as f64 + 1.0) / hf * wf / 2.0;
                    (x as f64) < wf / 2.0 + half && (x as f64 + 1.0) > wf / 2.0 - half
                }
                GlyphShape::LShape => {
                    let tw = (w / 3).max(2);
                    let th = (h / 3).max(2);
                    x < tw || y >= h - th
                }
            };
            mask[y * w + x] = inside;
        }
    }
    mask
}

/// Tight pixel bounding box `(x0, y0, x1, y1)` (half-open) of a mask.
pub fn mask_extent(mask: &[bool], w: usize) -> Option<(usize, usize, usize, usize)> {
    let mut ext: Option<(usize, usize, usize, usize)> = None;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (x, y) = (i % w, i / w);
        ext = Some(match ext {
            None => (x, y, x + 1, y + 1),
            Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
        });
    }
    ext
}

/// A rendered frame: interleaved RGB bytes plus ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub rgb: Vec<u8>,
    pub objects: Vec<(usize, BBox)>,
}

fn frame_rng(seed: u64, video: usize, frame: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((video as u64) << 32) | frame);
    rng
}

/// Renders one frame. Pure function of `(config, video, frame)`.
pub fn render_frame(config: &SynthConfig, video: usize, frame: usize) -> SynthFrame {
    let (w, h) = (config.image_w, config.image_h);
    let mut bg_rng = frame_rng(config.seed, video, u32::MAX as u64);
    let base: [f64; 3] = [0; 3].map(|_| bg_rng.gen_range(0.18..0.5));
    let tilt: [f64; 2] = [bg_rng.gen_range(-0.08..0.08), bg_rng.gen_range(-0.08..0.08)];

    let mut rng = frame_rng(config.seed, video, frame as u64);
    let mut canvas = vec![0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let g = tilt[0] * (x as f64 / w as f64 - 0.5) + tilt[1] * (y as f64 / h as f64 - 0.5);
            for c in 0..3 {
                canvas[(y * w + x) * 3 + c] = base[c] + g;
            }
        }
    }

    let n_glyphs = rng.gen_range(config.glyphs_per_frame[0]..=config.glyphs_per_frame[1]);
    let mut objects: Vec<(usize, BBox)> = Vec::with_capacity(n_glyphs);
    for _ in 0..n_glyphs {
        let class = rng.gen_range(0..config.n_classes);
        let side = rng.gen_range(config.glyph_size[0]..=config.glyph_size[1]) as f64;
        let (gw, gh) = match config.profile {
            Difficulty::Easy => {
                let aspect: f64 = rng.gen_range(0.8..1.25);
                (side / aspect.sqrt(), side * aspect.sqrt())
            }
            Difficulty::Cluttered => (
                side * rng.gen_range(0.77..MAX_JITTER),
                side * rng.gen_range(0.77..MAX_JITTER),
            ),
        };
        let (gw, gh) = (gw.round().max(8.0) as usize, gh.round().max(8.0) as usize);
        let shade = match config.profile {
            Difficulty::Easy => 1.0,
            Difficulty::Cluttered => rng.gen_range(0.85..1.1),
        };
        let mut placed = None;
        for _ in 0..50 {
            let x0 = rng.gen_range(0..=w - gw);
            let y0 = rng.gen_range(0..=h - gh);
            let cand = BBox::new(x0 as f64, y0 as f64, (x0 + gw) as f64, (y0 + gh) as f64);
            let ok = objects.iter().all(|(_, other)| match config.profile {
                Difficulty::Easy => {
                    let margin = BBox::new(
                        other.x_min - 4.0,
                        other.y_min - 4.0,
                        other.x_max + 4.0,
                        other.y_max + 4.0,
                    );
                    iou(&cand, &margin) == 0.0
                }
                Difficulty::Cluttered => iou(&cand, other) <= 0.3,
            });
            if ok {
                placed = Some((x0, y0));
                break;
            }
        }
        let Some((x0, y0)) = placed else { continue };
        let (shape, color) = class_glyph(class);
        let mask = glyph_mask(shape, gw, gh);
        for gy in 0..gh {
            for gx in 0..gw {
                if mask[gy * gw + gx] {
                    let p = ((y0 + gy) * w + x0 + gx) * 3;
                    for c in 0..3 {
                        canvas[p + c] = color[c] as f64 / 255.0 * shade;
                    }
                }
            }
        }
        let (ex0, ey0, ex1, ey1) = mask_extent(&mask, gw).expect("non-empty glyph");
        objects.push((
            class,
            BBox::new(
                (x0 + ex0) as f64,
                (y0 + ey0) as f64,
                (x0 + ex1) as f64,
                (y0 + ey1) as f64,
            ),
        ));
    }

    let amp = config.noise_level;
    let rgb = canvas
        .into_iter()
        .map(|v| {
            let n = if amp > 0.0 { rng.gen_range(-amp..amp) } else { 0.0 };
            ((v + n).clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    SynthFrame { rgb, objects }
}

/// Writes the full synthetic dataset under `out_dir` and returns its manifest.
pub fn synth_generate(config: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let class_names = config.class_names();
    std::fs::create_dir_all(out_dir).map_err(|e| DataError::io(out_dir, e))?;
    let mut videos = Vec::with_capacity(config.n_videos);
    for v in 0..config.n_videos {
        let video_id = format!("video_{v:02}");
        let dir = out_dir.join(&video_id);
        std::fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
        let mut frames = Vec::with_capacity(config.frames_per_video);
        for f in 0..config.frames_per_video {
            let frame = render_frame(config, v, f);
            let image = format!("{video_id}/frame_{f:04}.ppm");
            let annotation = format!("{video_id}/frame_{f:04}.xml");
            let ann = Annotation {
                image_path: image.clone(),
                image_w: config.image_w as u32,
                image_h: config.image_h as u32,
                objects: frame
                    .objects
                    .iter()
                    .map(|&(k, bbox)| AnnotatedObject {
                        class_name: class_names[k].clone(),
                        bbox,
                    })
                    .collect(),
            };
            let img_path = out_dir.join(&image);
            std::fs::write(
                &img_path,
                encode_ppm(config.image_w, config.image_h, &frame.rgb),
            )
            .map_err(|e| DataError::io(&img_path, e))?;
            let ann_path = out_dir.join(&annotation);
            std::fs::write(&ann_path, write_voc_xml(&ann)).map_err(|e| DataError::io(&ann_path, e))?;
            frames.push(FrameEntry { image, annotation });
        }
        videos.push(VideoEntry { video_id, frames });
    }
    let manifest = DatasetManifest {
        class_names,
        videos,
    };
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, manifest.to_json()).map_err(|e| DataError::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_fill_their_box() {
        for shape in [
            GlyphShape::Rectangle,
            GlyphShape::Disc,
            GlyphShape::Triangle,
            GlyphShape::LShape,
        ] {
            for (w, h) in [(8, 8), (9, 14), (36, 36), (40, 71), (115, 67)] {
                let m = glyph_mask(shape, w, h);
                assert_eq!(mask_extent(&m, w), Some((0, 0, w, h)), "{shape:?} {w}x{h}");
            }
        }
    }

    #[test]
    fn classes_are_distinct() {
        let glyphs: Vec<_> = (0..MAX_GLYPH_CLASSES).map(class_glyph).collect();
        for i in 0..glyphs.len() {
            for j in i + 1..glyphs.len() {
                assert_ne!(glyphs[i], glyphs[j]);
            }
        }
    }

    #[test]
    fn too_many_classes_rejected() {
        let cfg = SynthConfig {
            n_classes: 32,
            ..SynthConfig::desk_easy()
        };
        assert!(matches!(cfg.validate(), Err(DataError::Config(_))));
        assert!(SynthConfig::desk_easy().validate().is_ok());
        assert!(SynthConfig::desk_cluttered().validate().is_ok());
    }

    #[test]
    fn render_is_pure() {
        let cfg = SynthConfig::desk_cluttered();
        assert_eq!(render_frame(&cfg, 3, 5), render_frame(&cfg, 3, 5));
        assert_ne!(render_frame(&cfg, 3, 5), render_frame(&cfg, 3, 6));
    }

    #[test]
    fn easy_frames_have_separated_glyphs() {
        let cfg = SynthConfig::desk_easy();
        for f in 0..20 {
            let frame = render_frame(&cfg, 0, f);
            assert!(!frame.objects.is_empty());
            for (i, (_, a)) in frame.objects.iter().enumerate() {
                assert!(a.is_inside(cfg.image_w as f64, cfg.image_h as f64));
                for (_, b) in &frame.objects[i + 1..] {
                    assert_eq!(iou(a, b), 0.0);
                }
            }
        }
    }
}
