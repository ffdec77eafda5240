//! Binary PGM (`P5`) / PPM (`P6`) frames, 8-bit. Used to ingest a directory
//! of decoded frames as a raw video and to write mask previews.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::clip::{Clip, ClipDims};

/// Decoded image with channel-interleaved samples in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub samples: Vec<f32>,
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut token = |field: &'static str| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format {
                field,
                detail: "truncated header".into(),
            });
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token("magic")?.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(Error::Format {
                field: "magic",
                detail: format!("{other} is not P5 or P6"),
            })
        }
    };
    let mut number = |field: &'static str| -> Result<usize> {
        token(field)?.parse().map_err(|e| Error::Format {
            field,
            detail: format!("{e}"),
        })
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 255 {
        return Err(Error::Format {
            field: "header",
            detail: format!("{width}x{height} maxval {maxval} unsupported"),
        });
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let n = width * height * channels;
    let raster = bytes.get(start..start + n).ok_or_else(|| Error::Format {
        field: "raster",
        detail: format!("need {n} bytes"),
    })?;
    Ok(Image {
        width,
        height,
        channels,
        samples: raster.iter().map(|&b| f32::from(b) / maxval as f32).collect(),
    })
}

pub fn read_pnm(path: &Path) -> Result<Image> {
    decode_pnm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Encodes samples in `[0,1]` as 8-bit PGM (1 channel) or PPM (3 channels).
pub fn encode_pnm(width: usize, height: usize, channels: usize, samples: &[f32]) -> Result<Vec<u8>> {
    let magic = match channels {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::contract(format!("cannot write {channels}-channel PNM"))),
    };
    if samples.len() != width * height * channels {
        return Err(Error::shape("pnm", &[height, width, channels], &[samples.len()]));
    }
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend(samples.iter().map(|&s| (s.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn write_pnm(path: &Path, width: usize, height: usize, channels: usize, samples: &[f32]) -> Result<()> {
    fs::write(path, encode_pnm(width, height, channels, samples)?).map_err(|e| Error::io(path, e))
}

/// Reads every `.pgm`/`.ppm` in `dir`, sorted by file name, as one video.
pub fn read_frames_dir(dir: &Path, video_id: &str, fps: f64) -> Result<Clip> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptySequence);
    }
    let first = read_pnm(&paths[0])?;
    let mut pixels = Vec::with_capacity(paths.len() * first.samples.len());
    pixels.extend_from_slice(&first.samples);
    for p in &paths[1..] {
        let img = read_pnm(p)?;
        if (img.width, img.height, img.channels) != (first.width, first.height, first.channels) {
            return Err(Error::Dataset(format!(
                "{}: {}x{}x{} differs from first frame {}x{}x{}",
                p.display(),
                img.width,
                img.height,
                img.channels,
                first.width,
                first.height,
                first.channels
            )));
        }
        pixels.extend_from_slice(&img.samples);
    }
    let dims = ClipDims::new(paths.len(), first.height, first.width, first.channels);
    Clip::new(video_id, 0, fps, dims, pixels)
}
