//! Frame decoding into `3×H×W` tensors with values in `[0, 1]`.
//!
//! Binary PPM (P6) is decoded natively. Other formats plug in through
//! [`ImageDecoder`]; the `jpeg` cargo feature registers a JPEG decoder.

use std::path::Path;

use super::{DataError, Result};
use crate::tensor::Tensor;

pub trait ImageDecoder: Send + Sync {
    fn name(&self) -> &'static str;

    fn can_decode(&self, bytes: &[u8]) -> bool;

    fn decode(&self, bytes: &[u8]) -> Result<Tensor>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct PpmDecoder;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn header_int(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(DataError::Format {
                offset: start,
                message: format!("expected {what}"),
            })
    }
}

impl ImageDecoder for PpmDecoder {
    fn name(&self) -> &'static str {
        "ppm"
    }

    fn can_decode(&self, bytes: &[u8]) -> bool {
        bytes.starts_with(b"P6")
    }

    fn decode(&self, bytes: &[u8]) -> Result<Tensor> {
        if !self.can_decode(bytes) {
            return Err(DataError::Format {
                offset: 0,
                message: "missing P6 magic".into(),
            });
        }
        let mut cur = Cursor { bytes, pos: 2 };
        let width = cur.header_int("width")?;
        let height = cur.header_int("height")?;
        let maxval = cur.header_int("maxval")?;
        if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
            return Err(DataError::Format {
                offset: cur.pos,
                message: format!("invalid header {width}x{height} maxval {maxval}"),
            });
        }
        match bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            _ => {
                return Err(DataError::Format {
                    offset: cur.pos,
                    message: "expected whitespace after maxval".into(),
                })
            }
        }
        let sample_bytes = if maxval < 256 { 1 } else { 2 };
        let plane = width * height;
        let needed = plane * 3 * sample_bytes;
        let pixels = &bytes[cur.pos..];
        if pixels.len() < needed {
            return Err(DataError::Format {
                offset: bytes.len(),
                message: format!(
                    "pixel data truncated: expected {needed} bytes from offset {}, found {}",
                    cur.pos,
                    pixels.len()
                ),
            });
        }
        let scale = 1.0 / maxval as f32;
        let mut data = vec![0f32; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                let k = (i * 3 + c) * sample_bytes;
                let raw = if sample_bytes == 1 {
                    pixels[k] as u32
                } else {
                    u16::from_be_bytes([pixels[k], pixels[k + 1]]) as u32
                };
                data[c * plane + i] = (raw.min(maxval as u32)) as f32 * scale;
            }
        }
        Ok(Tensor::new(&[3, height, width], data)?)
    }
}

#[cfg(feature = "jpeg")]
#[derive(Debug, Default, Clone, Copy)]
pub struct JpegDecoder;

#[cfg(feature = "jpeg")]
impl ImageDecoder for JpegDecoder {
    fn name(&self) -> &'static str {
        "jpeg"
    }

    fn can_decode(&self, bytes: &[u8]) -> bool {
        bytes.starts_with(&[0xFF, 0xD8])
    }

    fn decode(&self, bytes: &[u8]) -> Result<Tensor> {
        let mut decoder = jpeg_decoder::Decoder::new(bytes);
        let pixels = decoder.decode().map_err(|e| DataError::Format {
            offset: 0,
            message: e.to_string(),
        })?;
        let info = decoder.info().ok_or(DataError::Format {
            offset: 0,
            message: "missing JPEG header".into(),
        })?;
        let (w, h) = (info.width as usize, info.height as usize);
        let plane = w * h;
        let mut data = vec![0f32; 3 * plane];
        match info.pixel_format {
            jpeg_decoder::PixelFormat::RGB24 => {
                for i in 0..plane {
                    for c in 0..3 {
                        data[c * plane + i] = pixels[i * 3 + c] as f32 / 255.0;
                    }
                }
            }
            jpeg_decoder::PixelFormat::L8 => {
                for i in 0..plane {
                    for c in 0..3 {
                        data[c * plane + i] = pixels[i] as f32 / 255.0;
                    }
                }
            }
            other => {
                return Err(DataError::Format {
                    offset: 0,
                    message: format!("unsupported JPEG pixel format {other:?}"),
                })
            }
        }
        Ok(Tensor::new(&[3, h, w], data)?)
    }
}

/// Ordered set of decoders; the first one that recognizes the bytes wins.
pub struct ImageLoader {
    decoders: Vec<Box<dyn ImageDecoder>>,
}

impl Default for ImageLoader {
    fn default() -> Self {
        #[allow(unused_mut)]
        let mut decoders: Vec<Box<dyn ImageDecoder>> = vec![Box::new(PpmDecoder)];
        #[cfg(feature = "jpeg")]
        decoders.push(Box::new(JpegDecoder));
        Self { decoders }
    }
}

impl ImageLoader {
    pub fn with_decoder(mut self, decoder: Box<dyn ImageDecoder>) -> Self {
        self.decoders.push(decoder);
        self
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<Tensor> {
        self.decoders
            .iter()
            .find(|d| d.can_decode(bytes))
            .ok_or(DataError::Format {
                offset: 0,
                message: "unrecognized image magic".into(),
            })?
            .decode(bytes)
    }

    pub fn load(&self, path: &Path) -> Result<Tensor> {
        let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
        self.decode(&bytes)
    }
}

/// Loads an image with the default decoders.
pub fn load_image(path: &Path) -> Result<Tensor> {
    ImageLoader::default().load(path)
}

/// Encodes interleaved 8-bit RGB as binary PPM.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3, "rgb buffer size");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Bilinear resampling of a `C×H×W` tensor (pixel-center aligned).
pub fn resize_bilinear(image: &Tensor, out_w: usize, out_h: usize) -> Result<Tensor> {
    if image.rank() != 3 || out_w == 0 || out_h == 0 {
        return Err(DataError::Consistency(format!(
            "cannot resize {:?} to {out_w}x{out_h}",
            image.shape()
        )));
    }
    let [c, h, w] = [image.shape()[0], image.shape()[1], image.shape()[2]];
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let src = image.data();
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    let mut out = vec![0f32; c * out_h * out_w];
    for oy in 0..out_h {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f32;
        for ox in 0..out_w {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f32;
            for ci in 0..c {
                let p = &src[ci * h * w..];
                let top = p[y0 * w + x0] * (1.0 - wx) + p[y0 * w + x1] * wx;
                let bot = p[y1 * w + x0] * (1.0 - wx) + p[y1 * w + x1] * wx;
                out[(ci * out_h + oy) * out_w + ox] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    Ok(Tensor::new(&[c, out_h, out_w], out)?)
}
