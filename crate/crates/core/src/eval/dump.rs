//! Line-delimited JSON detection dumps.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::DatasetManifest;
use crate::detector::Detection;
use crate::geometry::BBox;

use super::{EvalError, FrameDetections, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpRecord {
    pub video: String,
    pub frame: String,
    pub class: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

impl DumpRecord {
    pub fn from_frames(frames: &[FrameDetections], class_names: &[String]) -> Vec<Self> {
        frames
            .iter()
            .flat_map(|f| {
                f.detections.iter().map(move |d| DumpRecord {
                    video: f.video_id.clone(),
                    frame: f.frame.clone(),
                    class: class_names[d.class_id].clone(),
                    score: d.score,
                    bbox: d.bbox.to_array(),
                })
            })
            .collect()
    }
}

pub fn write_dump(records: &[DumpRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dump(text: &str) -> Result<Vec<DumpRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Json(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Groups dump records into per-frame detection lists in manifest order.
pub fn detections_from_dump(records: &[DumpRecord], manifest: &DatasetManifest) -> Result<Vec<Vec<Detection>>> {
    let mut slot = HashMap::new();
    for video in &manifest.videos {
        for frame in &video.frames {
            let k = slot.len();
            slot.insert((video.video_id.as_str(), frame.image.as_str()), k);
        }
    }
    let mut out = vec![Vec::new(); slot.len()];
    for r in records {
        let k = *slot.get(&(r.video.as_str(), r.frame.as_str())).ok_or_else(|| {
            EvalError::Config(format!("dump refers to unknown frame {}/{}", r.video, r.frame))
        })?;
        let class_id = manifest
            .class_index(&r.class)
            .ok_or_else(|| EvalError::Config(format!("dump refers to unknown class {:?}", r.class)))?;
        let [x0, y0, x1, y1] = r.bbox;
        out[k].push(Detection {
            class_id,
            score: r.score,
            bbox: BBox {
                x_min: x0,
                y_min: y0,
                x_max: x1,
                y_max: y1,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FrameEntry, VideoEntry};

    #[test]
    fn roundtrip_and_grouping() {
        let manifest = DatasetManifest {
            class_names: vec!["saw".into()],
            videos: vec![VideoEntry {
                video_id: "v".into(),
                frames: vec![
                    FrameEntry {
                        image: "a.ppm".into(),
                        annotation: "a.xml".into(),
                    },
                    FrameEntry {
                        image: "b.ppm".into(),
                        annotation: "b.xml".into(),
                    },
                ],
            }],
        };
        let recs = vec![DumpRecord {
            video: "v".into(),
            frame: "b.ppm".into(),
            class: "saw".into(),
            score: 0.1 + 0.2,
            bbox: [1.5, 2.0, 3.25, 4.0],
        }];
        let mut buf = Vec::new();
        write_dump(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"box\":[1.5,2.0,3.25,4.0]"));
        let back = read_dump(&text).unwrap();
        assert_eq!(back, recs);
        let grouped = detections_from_dump(&back, &manifest).unwrap();
        assert!(grouped[0].is_empty());
        assert_eq!(grouped[1][0].score, 0.1 + 0.2);
        let mut bad = recs.clone();
        bad[0].class = "drill".into();
        assert!(detections_from_dump(&bad, &manifest).is_err());
    }
}
