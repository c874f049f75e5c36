//! Video-grouped dataset manifest stored as a single JSON document.
//! Frame paths are relative to the directory holding the manifest.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::ImageLoader;
use super::voc::{parse_voc_xml, Annotation};
use super::{DataError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub image: String,
    pub annotation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub video_id: String,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub videos: Vec<VideoEntry>,
}

/// One problem found by [`validate_manifest`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ManifestIssue {
    NoClasses,
    DuplicateClass(String),
    NoVideos,
    DuplicateVideoId(String),
    EmptyVideo(String),
    DanglingPath {
        video_id: String,
        frame: usize,
        path: String,
    },
    BadAnnotation {
        video_id: String,
        frame: usize,
        path: String,
        message: String,
    },
    UnknownClass {
        video_id: String,
        frame: usize,
        class_name: String,
    },
}

impl fmt::Display for ManifestIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoClasses => write!(f, "class_names is empty"),
            Self::DuplicateClass(c) => write!(f, "duplicate class name {c:?}"),
            Self::NoVideos => write!(f, "manifest lists no videos"),
            Self::DuplicateVideoId(v) => write!(f, "duplicate video id {v:?}"),
            Self::EmptyVideo(v) => write!(f, "video {v:?} has no frames"),
            Self::DanglingPath {
                video_id,
                frame,
                path,
            } => write!(f, "video {video_id:?} frame {frame}: missing file {path}"),
            Self::BadAnnotation {
                video_id,
                frame,
                path,
                message,
            } => write!(f, "video {video_id:?} frame {frame}: {path}: {message}"),
            Self::UnknownClass {
                video_id,
                frame,
                class_name,
            } => write!(
                f,
                "video {video_id:?} frame {frame}: unknown class {class_name:?}"
            ),
        }
    }
}

impl DatasetManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DataError::Json(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn frame_count(&self) -> usize {
        self.videos.iter().map(|v| v.frames.len()).sum()
    }

    pub fn video(&self, id: &str) -> Option<&VideoEntry> {
        self.videos.iter().find(|v| v.video_id == id)
    }

    /// The manifest restricted to the given videos, in manifest order.
    pub fn subset(&self, video_ids: &[String]) -> Self {
        Self {
            class_names: self.class_names.clone(),
            videos: self
                .videos
                .iter()
                .filter(|v| video_ids.contains(&v.video_id))
                .cloned()
                .collect(),
        }
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    DatasetManifest::from_json(&text)
}

/// Checks every invariant and every referenced file, collecting all issues.
pub fn validate_manifest(manifest: &DatasetManifest, root: &Path) -> Vec<ManifestIssue> {
    let mut issues = Vec::new();
    if manifest.class_names.is_empty() {
        issues.push(ManifestIssue::NoClasses);
    }
    let mut seen = HashSet::new();
    for c in &manifest.class_names {
        if !seen.insert(c) {
            issues.push(ManifestIssue::DuplicateClass(c.clone()));
        }
    }
    if manifest.videos.is_empty() {
        issues.push(ManifestIssue::NoVideos);
    }
    let mut ids = HashSet::new();
    for video in &manifest.videos {
        if !ids.insert(&video.video_id) {
            issues.push(ManifestIssue::DuplicateVideoId(video.video_id.clone()));
        }
        if video.frames.is_empty() {
            issues.push(ManifestIssue::EmptyVideo(video.video_id.clone()));
        }
        for (k, frame) in video.frames.iter().enumerate() {
            let dangling = |path: &str| ManifestIssue::DanglingPath {
                video_id: video.video_id.clone(),
                frame: k,
                path: path.to_string(),
            };
            if !root.join(&frame.image).is_file() {
                issues.push(dangling(&frame.image));
            }
            let ann_path = root.join(&frame.annotation);
            if !ann_path.is_file() {
                issues.push(dangling(&frame.annotation));
                continue;
            }
            let parsed = std::fs::read_to_string(&ann_path)
                .map_err(|e| DataError::io(&ann_path, e))
                .and_then(|t| parse_voc_xml(&t));
            match parsed {
                Ok(ann) => {
                    for obj in &ann.objects {
                        if manifest.class_index(&obj.class_name).is_none() {
                            issues.push(ManifestIssue::UnknownClass {
                                video_id: video.video_id.clone(),
                                frame: k,
                                class_name: obj.class_name.clone(),
                            });
                        }
                    }
                }
                Err(e) => issues.push(ManifestIssue::BadAnnotation {
                    video_id: video.video_id.clone(),
                    frame: k,
                    path: frame.annotation.clone(),
                    message: e.to_string(),
                }),
            }
        }
    }
    issues
}

/// A decoded frame with its ground truth resolved to class indices.
#[derive(Debug, Clone)]
pub struct LoadedFrame {
    pub video_id: String,
    pub image_path: String,
    pub image: Tensor,
    pub annotation: Annotation,
    pub class_ids: Vec<usize>,
}

/// Loads a frame's image and annotation and checks they agree.
pub fn load_frame(
    manifest: &DatasetManifest,
    root: &Path,
    video: &VideoEntry,
    frame: &FrameEntry,
    loader: &ImageLoader,
) -> Result<LoadedFrame> {
    let ann_path: PathBuf = root.join(&frame.annotation);
    let text = std::fs::read_to_string(&ann_path).map_err(|e| DataError::io(&ann_path, e))?;
    let annotation = parse_voc_xml(&text)?;
    let image = loader.load(&root.join(&frame.image))?;
    let (h, w) = (image.shape()[1], image.shape()[2]);
    if (w as u32, h as u32) != (annotation.image_w, annotation.image_h) {
        return Err(DataError::Consistency(format!(
            "{}: image is {w}x{h} but annotation says {}x{}",
            frame.image, annotation.image_w, annotation.image_h
        )));
    }
    let class_ids = annotation
        .objects
        .iter()
        .map(|o| {
            manifest.class_index(&o.class_name).ok_or_else(|| {
                DataError::Consistency(format!(
                    "{}: unknown class {:?}",
                    frame.annotation, o.class_name
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedFrame {
        video_id: video.video_id.clone(),
        image_path: frame.image.clone(),
        image,
        annotation,
        class_ids,
    })
}

/// Loads every frame of the given manifest in order.
pub fn load_all_frames(manifest: &DatasetManifest, root: &Path) -> Result<Vec<LoadedFrame>> {
    let loader = ImageLoader::default();
    let mut out = Vec::with_capacity(manifest.frame_count());
    for video in &manifest.videos {
        for frame in &video.frames {
            out.push(load_frame(manifest, root, video, frame, &loader)?);
        }
    }
    Ok(out)
}
