//! In-memory clips and the `VCLP` container.
//!
//! Container layout, little-endian: magic `VCLP`, version `u32`, video id
//! length `u16` + UTF-8 bytes, clip index `u32`, fps `f64`, then `T, H, W, C`
//! as `u32`, followed by `T·H·W·C` `f32` pixels in (frame, row, col, channel)
//! order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLIP_MAGIC: &[u8; 4] = b"VCLP";
pub const CLIP_VERSION: u32 = 1;

/// Bytes before the pixel payload, excluding the video id itself.
pub const CLIP_HEADER_FIXED: usize = 4 + 4 + 2 + 4 + 8 + 4 * 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClipDims {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ClipDims {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn numel(&self) -> usize {
        self.frames * self.frame_len()
    }
}

/// Fixed-length video tensor with its position in a recovery sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub video_id: String,
    pub clip_index: usize,
    pub fps: f64,
    dims: ClipDims,
    pixels: Vec<f32>,
}

impl Clip {
    pub fn new(
        video_id: impl Into<String>,
        clip_index: usize,
        fps: f64,
        dims: ClipDims,
        pixels: Vec<f32>,
    ) -> Result<Self> {
        if dims.frames == 0 || dims.height == 0 || dims.width == 0 || dims.channels == 0 {
            return Err(Error::contract(format!("clip extents must be positive: {dims:?}")));
        }
        if pixels.len() != dims.numel() {
            return Err(Error::shape(
                "clip",
                &[dims.frames, dims.height, dims.width, dims.channels],
                &[pixels.len()],
            ));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::contract(format!("fps must be positive, got {fps}")));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::contract(format!("pixel value {bad} outside [0,1]")));
        }
        Ok(Self {
            video_id: video_id.into(),
            clip_index,
            fps,
            dims,
            pixels,
        })
    }

    pub fn dims(&self) -> ClipDims {
        self.dims
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.dims.frame_len();
        &self.pixels[t * n..(t + 1) * n]
    }

    pub fn duration_seconds(&self) -> f64 {
        self.dims.frames as f64 / self.fps
    }

    /// Channel-mean grayscale of frame `t`, row-major `H × W`.
    pub fn gray(&self, t: usize) -> Vec<f64> {
        let c = self.dims.channels;
        self.frame(t)
            .chunks(c)
            .map(|px| px.iter().map(|&v| f64::from(v)).sum::<f64>() / c as f64)
            .collect()
    }
}

pub fn encode_clip(clip: &Clip) -> Result<Vec<u8>> {
    let id = clip.video_id.as_bytes();
    let id_len = u16::try_from(id.len()).map_err(|_| Error::Format {
        field: "video_id",
        detail: format!("{} bytes exceeds u16", id.len()),
    })?;
    let d = clip.dims;
    let mut out = Vec::with_capacity(CLIP_HEADER_FIXED + id.len() + 4 * d.numel());
    out.extend_from_slice(CLIP_MAGIC);
    out.extend_from_slice(&CLIP_VERSION.to_le_bytes());
    out.extend_from_slice(&id_len.to_le_bytes());
    out.extend_from_slice(id);
    let index = u32::try_from(clip.clip_index).map_err(|_| Error::Format {
        field: "clip_index",
        detail: "exceeds u32".into(),
    })?;
    out.extend_from_slice(&index.to_le_bytes());
    out.extend_from_slice(&clip.fps.to_le_bytes());
    for (name, e) in [("T", d.frames), ("H", d.height), ("W", d.width), ("C", d.channels)] {
        let e = u32::try_from(e).map_err(|_| Error::Format {
            field: "extent",
            detail: format!("{name} exceeds u32"),
        })?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    for p in &clip.pixels {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.buf.len() => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(Error::Format {
                field,
                detail: format!(
                    "truncated: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ),
            }),
        }
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
}

pub fn decode_clip(bytes: &[u8]) -> Result<Clip> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != CLIP_MAGIC {
        return Err(Error::Format {
            field: "magic",
            detail: "expected VCLP".into(),
        });
    }
    let version = c.u32("version")?;
    if version != CLIP_VERSION {
        return Err(Error::Format {
            field: "version",
            detail: format!("unsupported version {version}"),
        });
    }
    let id_len = u16::from_le_bytes(c.take(2, "video_id length")?.try_into().unwrap());
    let video_id = std::str::from_utf8(c.take(id_len as usize, "video_id")?)
        .map_err(|e| Error::Format {
            field: "video_id",
            detail: e.to_string(),
        })?
        .to_string();
    let clip_index = c.u32("clip_index")? as usize;
    let fps = f64::from_le_bytes(c.take(8, "fps")?.try_into().unwrap());
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::Format {
            field: "fps",
            detail: format!("{fps} is not a positive frame rate"),
        });
    }
    let mut ext = [0usize; 4];
    for e in &mut ext {
        *e = c.u32("extent")? as usize;
        if *e == 0 {
            return Err(Error::Format {
                field: "extent",
                detail: "zero extent".into(),
            });
        }
    }
    let dims = ClipDims::new(ext[0], ext[1], ext[2], ext[3]);
    let bytes_needed = ext
        .iter()
        .try_fold(1usize, |a, &e| a.checked_mul(e))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format {
            field: "extent",
            detail: format!("extents {ext:?} overflow"),
        })?;
    let payload = c.take(bytes_needed, "payload")?;
    if c.pos != bytes.len() {
        return Err(Error::Format {
            field: "payload",
            detail: format!("{} trailing bytes", bytes.len() - c.pos),
        });
    }
    let pixels: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Format {
            field: "payload",
            detail: format!("pixel value {bad} outside [0,1]"),
        });
    }
    Clip::new(video_id, clip_index, fps, dims, pixels)
}

pub fn write_clip(clip: &Clip, path: &Path) -> Result<()> {
    fs::write(path, encode_clip(clip)?).map_err(|e| Error::io(path, e))
}

pub fn read_clip(path: &Path) -> Result<Clip> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_clip(&bytes)
}
