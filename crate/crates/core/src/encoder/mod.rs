//! Factorized video transformer: patch tokens, spatial blocks per frame,
//! temporal blocks over per-frame CLS summaries.

mod block;
mod config;
mod model;

pub use block::{
    attend, attention_weights, partner_rows, transformer_block, xavier_std, AttentionParams, BlockParams,
    LayerNormParams, Linear, INIT_STD, LN_EPS,
};
pub use config::{EncoderConfig, PosEncMode};
pub use model::{patchify, CrossParams, Encoder};
