//! Binary model files.
//!
//! Layout (all integers little-endian `u32`):
//! `"TKAD"`, version, class count, then per class a length-prefixed UTF-8
//! name, then tensor count and per tensor: length-prefixed name, rank,
//! dims, raw `f32` values. Model hyper-parameters travel as `meta.*`
//! tensors whose `f32` slots carry the bit patterns of `f64` values
//! (low word first), so the round trip is exact.

use std::path::Path;

use crate::tensor::Tensor;

use super::model::{BackboneConfig, DetectorModel, ModelConfig};
use super::{DetectorError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TKAD";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn tensor(&mut self, name: &str, dims: &[usize], values: impl IntoIterator<Item = u32>) {
        self.str(name);
        self.u32(dims.len() as u32);
        for &d in dims {
            self.u32(d as u32);
        }
        for bits in values {
            self.u32(bits);
        }
    }

    fn meta(&mut self, name: &str, values: &[f64]) {
        let words = values.iter().flat_map(|v| {
            let b = v.to_bits();
            [b as u32, (b >> 32) as u32]
        });
        self.tensor(&format!("meta.{name}"), &[values.len(), 2], words);
    }
}

fn meta_values(config: &ModelConfig) -> Vec<(&'static str, Vec<f64>)> {
    let as_f = |v: &[usize]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let b = &config.backbone;
    vec![
        ("conv_channels", as_f(&b.conv_channels)),
        ("pools_after", as_f(&b.pools_after)),
        ("input_size", vec![b.input_w as f64, b.input_h as f64]),
        ("rpn_channels", vec![config.rpn_channels as f64]),
        ("anchor_scales", config.anchor_scales.clone()),
        ("anchor_ratios", config.anchor_ratios.clone()),
        ("roi_pool_size", vec![config.roi_pool_size as f64]),
        ("head_hidden", vec![config.head_hidden as f64]),
        ("bbox_std", config.bbox_std.to_vec()),
    ]
}

pub fn model_to_bytes(model: &DetectorModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(model.class_names.len() as u32);
    for name in &model.class_names {
        w.str(name);
    }
    let metas = meta_values(&model.config);
    let params = model.params();
    w.u32((metas.len() + params.len()) as u32);
    for (name, values) in &metas {
        w.meta(name, values);
    }
    for (name, t) in model.param_names().iter().zip(params) {
        w.tensor(name, t.shape(), t.data().iter().map(|v| v.to_bits()));
    }
    w.0
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn err(&self, message: impl Into<String>) -> DetectorError {
        DetectorError::Format {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(DetectorError::Format {
                offset: self.bytes.len(),
                message: format!("truncated while reading {what} ({n} bytes needed at offset {})", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let at = self.pos;
        let raw = self.take(n, what)?.to_vec();
        String::from_utf8(raw).map_err(|_| DetectorError::Format {
            offset: at,
            message: format!("{what} is not valid UTF-8"),
        })
    }
}

struct RawTensor {
    name: String,
    offset: usize,
    dims: Vec<usize>,
    words: Vec<u32>,
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<DetectorModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(DetectorError::Format {
            offset: 0,
            message: "bad magic (expected \"TKAD\")".into(),
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(DetectorError::Version {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let n_classes = r.u32("class count")? as usize;
    let mut class_names = Vec::new();
    for _ in 0..n_classes {
        class_names.push(r.str("class name")?);
    }
    let n_tensors = r.u32("tensor count")? as usize;
    let mut tensors = Vec::new();
    for _ in 0..n_tensors {
        let offset = r.pos;
        let name = r.str("tensor name")?;
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(r.err(format!("tensor {name} has implausible rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dimension")? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&c| c <= (bytes.len() - r.pos) / 4)
            .ok_or_else(|| DetectorError::Format {
                offset: bytes.len(),
                message: format!("truncated: tensor {name} {dims:?} exceeds the file"),
            })?;
        let raw = r.take(4 * count, "tensor values")?;
        let words = raw
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(RawTensor {
            name,
            offset,
            dims,
            words,
        });
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after tensor table"));
    }

    let find = |name: &str| {
        tensors.iter().find(|t| t.name == name).ok_or_else(|| DetectorError::Format {
            offset: bytes.len(),
            message: format!("missing tensor {name}"),
        })
    };
    let meta = |name: &str| -> Result<Vec<f64>> {
        let t = find(&format!("meta.{name}"))?;
        if t.dims.len() != 2 || t.dims[1] != 2 {
            return Err(DetectorError::Format {
                offset: t.offset,
                message: format!("meta.{name} must have shape [n, 2]"),
            });
        }
        Ok(t.words
            .chunks_exact(2)
            .map(|w| f64::from_bits(w[0] as u64 | ((w[1] as u64) << 32)))
            .collect())
    };
    let as_usize = |name: &str| -> Result<Vec<usize>> {
        meta(name)?
            .into_iter()
            .map(|v| {
                if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
                    Ok(v as usize)
                } else {
                    Err(DetectorError::Format {
                        offset: find(&format!("meta.{name}")).map(|t| t.offset).unwrap_or(0),
                        message: format!("meta.{name} holds non-integer {v}"),
                    })
                }
            })
            .collect()
    };
    let one = |name: &str| -> Result<usize> {
        as_usize(name)?.first().copied().ok_or_else(|| DetectorError::Format {
            offset: 0,
            message: format!("meta.{name} is empty"),
        })
    };
    let input = as_usize("input_size")?;
    let std = meta("bbox_std")?;
    if input.len() != 2 || std.len() != 4 {
        return Err(DetectorError::Format {
            offset: 0,
            message: "meta.input_size needs 2 values and meta.bbox_std 4".into(),
        });
    }
    let config = ModelConfig {
        backbone: BackboneConfig {
            conv_channels: as_usize("conv_channels")?,
            pools_after: as_usize("pools_after")?,
            input_w: input[0],
            input_h: input[1],
        },
        rpn_channels: one("rpn_channels")?,
        anchor_scales: meta("anchor_scales")?,
        anchor_ratios: meta("anchor_ratios")?,
        roi_pool_size: one("roi_pool_size")?,
        head_hidden: one("head_hidden")?,
        bbox_std: [std[0], std[1], std[2], std[3]],
    };
    config.validate().map_err(|e| DetectorError::Format {
        offset: 0,
        message: format!("stored model configuration is invalid: {e}"),
    })?;

    // Build the expected shapes from a template, then fill in stored values.
    let template = DetectorModel::init(config, class_names, 0).map_err(|e| DetectorError::Format {
        offset: 0,
        message: e.to_string(),
    })?;
    let mut model = template;
    let names = model.param_names();
    for (name, p) in names.iter().zip(model.params_mut()) {
        let t = find(name)?;
        if t.dims != p.shape() {
            return Err(DetectorError::Format {
                offset: t.offset,
                message: format!("tensor {name} has shape {:?}, expected {:?}", t.dims, p.shape()),
            });
        }
        *p = Tensor::new(&t.dims, t.words.iter().map(|&b| f32::from_bits(b)).collect())?;
    }
    let known = names.len() + meta_values(&model.config).len();
    if tensors.len() != known {
        return Err(DetectorError::Format {
            offset: 0,
            message: format!("{} tensors stored, {known} expected", tensors.len()),
        });
    }
    Ok(model)
}

pub fn save_model(model: &DetectorModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(model)).map_err(|e| DetectorError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<DetectorModel> {
    let bytes = std::fs::read(path).map_err(|e| DetectorError::io(path, e))?;
    model_from_bytes(&bytes)
}
