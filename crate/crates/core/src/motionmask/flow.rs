use serde::{Deserialize, Serialize};

use crate::dataio::Clip;
use crate::error::{Error, Result};

pub const DEFAULT_SEARCH_RADIUS: usize = 4;

/// Single-channel frame, row-major.
#[derive(Clone, Copy, Debug)]
pub struct GrayFrame<'a> {
    pub height: usize,
    pub width: usize,
    pub data: &'a [f64],
}

impl<'a> GrayFrame<'a> {
    pub fn new(height: usize, width: usize, data: &'a [f64]) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("gray frame", &[height, width], &[data.len()]));
        }
        Ok(Self { height, width, data })
    }

    fn clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.data[y * self.width + x]
    }
}

/// Integer displacement `(dy, dx)` for each tile of one frame, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowGrid {
    pub rows: usize,
    pub cols: usize,
    pub tile_size: usize,
    pub vectors: Vec<(i32, i32)>,
}

impl FlowGrid {
    pub fn at(&self, row: usize, col: usize) -> (i32, i32) {
        self.vectors[row * self.cols + col]
    }
}

pub(crate) fn tile_grid(height: usize, width: usize, tile_size: usize) -> Result<(usize, usize)> {
    if tile_size == 0 || !height.is_multiple_of(tile_size) || !width.is_multiple_of(tile_size) {
        return Err(Error::contract(format!(
            "{height}x{width} frame does not tile evenly by {tile_size}"
        )));
    }
    Ok((height / tile_size, width / tile_size))
}

/// Block matching: for each tile of `cur`, the displacement `d` within
/// `±search_radius` minimizing `Σ |cur(p) − prev(p − d)|`, reading `prev`
/// with edge clamping. Ties go to the smaller `|d|²`, then smaller `dy`,
/// then smaller `dx`.
pub fn tile_flow(prev: GrayFrame<'_>, cur: GrayFrame<'_>, tile_size: usize, search_radius: usize) -> Result<FlowGrid> {
    if (prev.height, prev.width) != (cur.height, cur.width) {
        return Err(Error::shape(
            "tile_flow",
            &[prev.height, prev.width],
            &[cur.height, cur.width],
        ));
    }
    if search_radius == 0 {
        return Err(Error::contract("search_radius must be at least 1"));
    }
    let (rows, cols) = tile_grid(cur.height, cur.width, tile_size)?;
    let r = search_radius as i32;
    let mut vectors = Vec::with_capacity(rows * cols);
    for tr in 0..rows {
        for tc in 0..cols {
            let (y0, x0) = (tr * tile_size, tc * tile_size);
            let mut best: Option<(f64, i32, i32, i32)> = None;
            for dy in -r..=r {
                for dx in -r..=r {
                    let mut sad = 0.0;
                    for y in y0..y0 + tile_size {
                        let row = &cur.data[y * cur.width..(y + 1) * cur.width];
                        for (x, &v) in row.iter().enumerate().skip(x0).take(tile_size) {
                            sad += (v - prev.clamped(y as isize - dy as isize, x as isize - dx as isize)).abs();
                        }
                    }
                    let key = (sad, dy * dy + dx * dx, dy, dx);
                    let better = match best {
                        None => true,
                        Some(b) => key.0 < b.0 || (key.0 == b.0 && (key.1, key.2, key.3) < (b.1, b.2, b.3)),
                    };
                    if better {
                        best = Some(key);
                    }
                }
            }
            let (_, _, dy, dx) = best.expect("search window is non-empty");
            vectors.push((dy, dx));
        }
    }
    Ok(FlowGrid {
        rows,
        cols,
        tile_size,
        vectors,
    })
}

/// Euclidean norm of every tile displacement.
pub fn motion_magnitude(flow: &FlowGrid) -> Vec<f64> {
    flow.vectors
        .iter()
        .map(|&(dy, dx)| f64::from(dy * dy + dx * dx).sqrt())
        .collect()
}

/// Mean absolute difference per tile, the flow-free alternative scorer.
pub fn tile_absdiff(prev: GrayFrame<'_>, cur: GrayFrame<'_>, tile_size: usize) -> Result<Vec<f64>> {
    if (prev.height, prev.width) != (cur.height, cur.width) {
        return Err(Error::shape(
            "tile_absdiff",
            &[prev.height, prev.width],
            &[cur.height, cur.width],
        ));
    }
    let (rows, cols) = tile_grid(cur.height, cur.width, tile_size)?;
    let mut out = vec![0.0; rows * cols];
    for y in 0..cur.height {
        for x in 0..cur.width {
            let i = y * cur.width + x;
            out[(y / tile_size) * cols + x / tile_size] += (cur.data[i] - prev.data[i]).abs();
        }
    }
    let area = (tile_size * tile_size) as f64;
    out.iter_mut().for_each(|v| *v /= area);
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionScorer {
    /// Block-matching flow magnitude.
    #[default]
    Sad,
    /// Mean absolute frame difference.
    Absdiff,
}

/// Per-frame, per-tile motion magnitudes of a clip, shape `frames × rows × cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionGrid {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    pub tile_size: usize,
    pub magnitudes: Vec<f64>,
}

impl MotionGrid {
    pub fn new(frames: usize, rows: usize, cols: usize, tile_size: usize, magnitudes: Vec<f64>) -> Result<Self> {
        if magnitudes.len() != frames * rows * cols {
            return Err(Error::shape("motion grid", &[frames, rows, cols], &[magnitudes.len()]));
        }
        if let Some(m) = magnitudes.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(Error::contract(format!(
                "motion magnitude {m} is not a finite non-negative value"
            )));
        }
        Ok(Self {
            frames,
            rows,
            cols,
            tile_size,
            magnitudes,
        })
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.magnitudes[t * n..(t + 1) * n]
    }

    pub fn mean(&self) -> f64 {
        self.magnitudes.iter().sum::<f64>() / self.magnitudes.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.magnitudes.iter().copied().fold(0.0, f64::max)
    }
}

/// Motion of every frame of `clip`. Frame `t ≥ 1` uses the `t−1 → t` pair;
/// frame 0 has no predecessor and borrows the `0 → 1` result. A single-frame
/// clip has zero motion.
pub fn clip_motion(clip: &Clip, tile_size: usize, search_radius: usize, scorer: MotionScorer) -> Result<MotionGrid> {
    let d = clip.dims();
    let (rows, cols) = tile_grid(d.height, d.width, tile_size)?;
    let grays: Vec<Vec<f64>> = (0..d.frames).map(|t| clip.gray(t)).collect();
    let mut per_frame: Vec<Vec<f64>> = Vec::with_capacity(d.frames);
    for t in 1..d.frames {
        let prev = GrayFrame::new(d.height, d.width, &grays[t - 1])?;
        let cur = GrayFrame::new(d.height, d.width, &grays[t])?;
        per_frame.push(match scorer {
            MotionScorer::Sad => motion_magnitude(&tile_flow(prev, cur, tile_size, search_radius)?),
            MotionScorer::Absdiff => tile_absdiff(prev, cur, tile_size)?,
        });
    }
    let first = per_frame.first().cloned().unwrap_or_else(|| vec![0.0; rows * cols]);
    let magnitudes = std::iter::once(first).chain(per_frame).flatten().collect();
    MotionGrid::new(d.frames, rows, cols, tile_size, magnitudes)
}
