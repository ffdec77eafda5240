//! Token position information: learned absolute tables and LieRE rotations.

mod ape;
mod liere;

pub use ape::{ape_lookup, ApeTable};
pub use liere::{
    expm_skew, expm_skew_tensor, rotate_qk, rotation_for_position, skew, squarings_for, LieRE, DEFAULT_BLOCK,
    DEFAULT_INIT_STD, DEFAULT_TAYLOR_TERMS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized token coordinate on the (x, y, time) axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionCoord {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl PositionCoord {
    /// Coordinate carried by CLS tokens; it maps to the identity rotation.
    pub const ORIGIN: PositionCoord = PositionCoord { x: 0.0, y: 0.0, t: 0.0 };

    pub fn new(x: f64, y: f64, t: f64) -> Result<Self> {
        let p = PositionCoord { x, y, t };
        if p.axes().iter().all(|v| (0.0..=1.0).contains(v)) {
            Ok(p)
        } else {
            Err(Error::contract(format!("position {p:?} outside [0,1]")))
        }
    }

    pub fn axes(&self) -> [f64; 3] {
        [self.x, self.y, self.t]
    }
}

fn frame_time(f: usize, frames: usize) -> f64 {
    if frames > 1 {
        f as f64 / (frames - 1) as f64
    } else {
        0.0
    }
}

/// Coordinates for spatial attention, laid out `[frame][token]` with the
/// CLS token first in each frame and patches in row-major order.
pub fn spatial_coords(grid: usize, frames: usize) -> Vec<PositionCoord> {
    let mut out = Vec::with_capacity(frames * (grid * grid + 1));
    for f in 0..frames {
        let t = frame_time(f, frames);
        out.push(PositionCoord::ORIGIN);
        for r in 0..grid {
            for c in 0..grid {
                out.push(PositionCoord {
                    x: (c as f64 + 0.5) / grid as f64,
                    y: (r as f64 + 0.5) / grid as f64,
                    t,
                });
            }
        }
    }
    out
}

/// Coordinates for temporal attention: CLS, then one token per frame at the frame center.
pub fn temporal_coords(frames: usize) -> Vec<PositionCoord> {
    std::iter::once(PositionCoord::ORIGIN)
        .chain((0..frames).map(|f| PositionCoord {
            x: 0.5,
            y: 0.5,
            t: frame_time(f, frames),
        }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinates_are_normalized() {
        let c = spatial_coords(4, 3);
        assert_eq!(c.len(), 3 * 17);
        assert_eq!(c[0], PositionCoord::ORIGIN);
        assert_eq!(
            c[1],
            PositionCoord {
                x: 0.125,
                y: 0.125,
                t: 0.0
            }
        );
        assert_eq!(c[17 * 2 + 16].t, 1.0);
        for p in &c {
            assert!(PositionCoord::new(p.x, p.y, p.t).is_ok());
        }
        let t = temporal_coords(5);
        assert_eq!(t.len(), 6);
        assert_eq!(t[5], PositionCoord { x: 0.5, y: 0.5, t: 1.0 });
        assert!(PositionCoord::new(1.5, 0.0, 0.0).is_err());
    }
}
