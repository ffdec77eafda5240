use serde::{Deserialize, Serialize};

use crate::dataio::Clip;
use crate::error::{Error, Result};

use super::flow::{clip_motion, tile_grid, MotionGrid, MotionScorer, DEFAULT_SEARCH_RADIUS};

pub const DEFAULT_KEEP_RATIO: f64 = 0.2;

/// Per-frame keep decisions, `frames × rows × cols`, `true` = retained.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileMask {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    pub tile_size: usize,
    pub keep: Vec<bool>,
}

impl TileMask {
    pub fn frame(&self, t: usize) -> &[bool] {
        let n = self.rows * self.cols;
        &self.keep[t * n..(t + 1) * n]
    }

    pub fn kept_in_frame(&self, t: usize) -> usize {
        self.frame(t).iter().filter(|&&k| k).count()
    }
}

/// `ceil(ρ·N)`, treating products within rounding noise of an integer as
/// that integer so that e.g. `0.7·10` keeps 7 rather than 8.
pub fn keep_count(keep_ratio: f64, tiles: usize) -> Result<usize> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::Config(format!("keep ratio {keep_ratio} outside (0,1]")));
    }
    let x = keep_ratio * tiles as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    Ok((k as usize).clamp(1, tiles))
}

/// Keeps the `ceil(ρ·N)` highest-magnitude tiles of every frame; equal
/// magnitudes favour the lower row-major index.
pub fn select_tiles(motion: &MotionGrid, keep_ratio: f64) -> Result<TileMask> {
    let n = motion.rows * motion.cols;
    let k = keep_count(keep_ratio, n)?;
    let mut keep = vec![false; motion.magnitudes.len()];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for t in 0..motion.frames {
        let mags = motion.frame(t);
        order.clear();
        order.extend(0..n);
        order.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]).then(a.cmp(&b)));
        for &i in &order[..k] {
            keep[t * n + i] = true;
        }
    }
    Ok(TileMask {
        frames: motion.frames,
        rows: motion.rows,
        cols: motion.cols,
        tile_size: motion.tile_size,
        keep,
    })
}

/// Sets every pixel of a dropped tile to exactly 0; kept pixels are untouched.
pub fn apply_mask(clip: &Clip, mask: &TileMask) -> Result<Clip> {
    let d = clip.dims();
    let (rows, cols) = tile_grid(d.height, d.width, mask.tile_size)?;
    if (mask.frames, mask.rows, mask.cols) != (d.frames, rows, cols) {
        return Err(Error::contract(format!(
            "mask {}x{}x{} does not align with clip tiling {}x{rows}x{cols}",
            mask.frames, mask.rows, mask.cols, d.frames
        )));
    }
    let mut out = clip.clone();
    let c = d.channels;
    let frame_len = d.frame_len();
    let pixels = out.pixels_mut();
    for t in 0..d.frames {
        let keep = mask.frame(t);
        for y in 0..d.height {
            for x in 0..d.width {
                if !keep[(y / mask.tile_size) * cols + x / mask.tile_size] {
                    let o = t * frame_len + (y * d.width + x) * c;
                    pixels[o..o + c].fill(0.0);
                }
            }
        }
    }
    Ok(out)
}

/// Motion-guided masking settings. `tile_size` should equal the encoder's
/// patch size so masks align with tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MgmConfig {
    pub tile_size: usize,
    pub keep_ratio: f64,
    pub search_radius: usize,
    pub scorer: MotionScorer,
}

impl Default for MgmConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            keep_ratio: DEFAULT_KEEP_RATIO,
            search_radius: DEFAULT_SEARCH_RADIUS,
            scorer: MotionScorer::Sad,
        }
    }
}

/// Motion, mask and masked clip for one input clip.
#[derive(Clone, Debug)]
pub struct MgmOutput {
    pub motion: MotionGrid,
    pub mask: TileMask,
    pub clip: Clip,
}

pub fn motion_guided_mask(clip: &Clip, config: &MgmConfig) -> Result<MgmOutput> {
    let motion = clip_motion(clip, config.tile_size, config.search_radius, config.scorer)?;
    let mask = select_tiles(&motion, config.keep_ratio)?;
    let masked = apply_mask(clip, &mask)?;
    Ok(MgmOutput {
        motion,
        mask,
        clip: masked,
    })
}
