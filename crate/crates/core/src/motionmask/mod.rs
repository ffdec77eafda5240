//! Tile-level block-matching flow and motion-guided masking.

mod flow;
mod mask;
mod preview;
#[cfg(test)]
mod tests;

pub use flow::{
    clip_motion, motion_magnitude, tile_absdiff, tile_flow, FlowGrid, GrayFrame, MotionGrid, MotionScorer,
    DEFAULT_SEARCH_RADIUS,
};
pub use mask::{
    apply_mask, keep_count, motion_guided_mask, select_tiles, MgmConfig, MgmOutput, TileMask, DEFAULT_KEEP_RATIO,
};
pub use preview::write_previews;
