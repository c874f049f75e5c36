//! Dataset ingestion: VOC annotations, frame images, the video-grouped
//! manifest, and the synthetic glyph generator.

pub mod image;
pub mod manifest;
pub mod synth;
pub mod taxonomy;
pub mod voc;

use std::path::Path;

use thiserror::Error;

pub use image::{encode_ppm, load_image, resize_bilinear, ImageDecoder, ImageLoader, PpmDecoder};
pub use manifest::{
    load_all_frames, load_frame, load_manifest, validate_manifest, DatasetManifest, FrameEntry,
    LoadedFrame, ManifestIssue, VideoEntry,
};
pub use synth::{synth_generate, Difficulty, SynthConfig};
pub use taxonomy::TKA_TOOL_NAMES;
pub use voc::{parse_voc_xml, write_voc_xml, AnnotatedObject, Annotation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("schema error: missing or invalid {0}")]
    Schema(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io {
        path: String,
        kind: std::io::ErrorKind,
        message: String,
    },
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

impl DataError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            kind: err.kind(),
            message: err.to_string(),
        }
    }

    /// `true` when the error is a missing file.
    pub fn is_not_found(&self) -> bool {
        matches!(
            self,
            Self::Io {
                kind: std::io::ErrorKind::NotFound,
                ..
            }
        )
    }
}

pub type Result<T> = std::result::Result<T, DataError>;
