//! Clips, recovery sequences, weak labels, the synthetic generator and pairs.

mod clip;
mod dataset;
mod frames;
mod labels;
mod pairs;
mod segment;
mod sequence;
mod synth;

pub use clip::{
    decode_clip, encode_clip, read_clip, write_clip, Clip, ClipDims, CLIP_HEADER_FIXED, CLIP_MAGIC, CLIP_VERSION,
};
pub use dataset::{split_by_participant, Dataset, Manifest, ManifestClip, ManifestSequence, Split, MANIFEST_FILE};
pub use frames::{decode_pnm, encode_pnm, read_frames_dir, read_pnm, write_pnm, Image};
pub use labels::{weak_label, WeakLabel};
pub use pairs::{make_pairs, PairSample};
pub use segment::segment_video;
pub use sequence::RecoverySequence;
pub use synth::{derive_seed, render_clip, synth_dataset, synth_sequence, ClipMotion, Scene, SynthParams};
