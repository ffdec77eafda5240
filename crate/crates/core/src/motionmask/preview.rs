use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataio::{write_pnm, Clip};
use crate::error::{Error, Result};

use super::flow::MotionGrid;
use super::mask::TileMask;

/// Writes, per frame, a motion heatmap (`heat_TTT.pgm`, normalized to the
/// clip maximum) and an overlay (`overlay_TTT.ppm`, dropped tiles dimmed to a
/// quarter brightness), plus `tiles.csv` with every tile's magnitude.
pub fn write_previews(dir: &Path, clip: &Clip, motion: &MotionGrid, mask: &TileMask) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = clip.dims();
    let ts = motion.tile_size;
    let peak = motion.max();
    let mut csv = String::from("frame,row,col,magnitude,kept\n");
    for t in 0..d.frames {
        let mags = motion.frame(t);
        let keep = mask.frame(t);
        let tile_of = |y: usize, x: usize| (y / ts) * motion.cols + x / ts;
        let heat: Vec<f32> = (0..d.height * d.width)
            .map(|i| {
                let m = mags[tile_of(i / d.width, i % d.width)];
                if peak > 0.0 {
                    (m / peak) as f32
                } else {
                    0.0
                }
            })
            .collect();
        write_pnm(&dir.join(format!("heat_{t:03}.pgm")), d.width, d.height, 1, &heat)?;
        let gray = clip.gray(t);
        let mut overlay = Vec::with_capacity(3 * gray.len());
        for (i, g) in gray.iter().enumerate() {
            let scale = if keep[tile_of(i / d.width, i % d.width)] {
                1.0
            } else {
                0.25
            };
            let v = (*g * scale) as f32;
            if d.channels == 3 {
                let px = &clip.frame(t)[3 * i..3 * i + 3];
                overlay.extend(px.iter().map(|p| p * scale as f32));
            } else {
                overlay.extend([v, v, v]);
            }
        }
        write_pnm(&dir.join(format!("overlay_{t:03}.ppm")), d.width, d.height, 3, &overlay)?;
        for r in 0..motion.rows {
            for c in 0..motion.cols {
                let i = r * motion.cols + c;
                let _ = writeln!(csv, "{t},{r},{c},{},{}", mags[i], u8::from(keep[i]));
            }
        }
    }
    let path = dir.join("tiles.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}
