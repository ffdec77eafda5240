use crate::error::{Error, Result};

use super::clip::{Clip, ClipDims};
use super::sequence::RecoverySequence;

/// Cuts a raw video (a single long [`Clip`]) into consecutive non-overlapping
/// windows of `clip_seconds`, sampling `clip_frames` frames at uniform stride
/// inside each window. A trailing partial window is dropped.
pub fn segment_video(
    video: &Clip,
    participant_id: &str,
    clip_seconds: f64,
    clip_frames: usize,
) -> Result<RecoverySequence> {
    if !(clip_seconds.is_finite() && clip_seconds > 0.0) || clip_frames == 0 {
        return Err(Error::Config(format!(
            "clip length {clip_seconds} s with {clip_frames} frames is not usable"
        )));
    }
    let window = (clip_seconds * video.fps).round() as usize;
    if clip_frames > window {
        return Err(Error::Config(format!(
            "{clip_frames} frames requested from a {window}-frame window"
        )));
    }
    let d = video.dims();
    let count = d.frames / window;
    if count == 0 {
        return Err(Error::EmptySequence);
    }
    let dims = ClipDims::new(clip_frames, d.height, d.width, d.channels);
    let fps = clip_frames as f64 / clip_seconds;
    let clips = (0..count)
        .map(|i| {
            let start = i * window;
            let mut pixels = Vec::with_capacity(dims.numel());
            for j in 0..clip_frames {
                pixels.extend_from_slice(video.frame(start + j * window / clip_frames));
            }
            Clip::new(video.video_id.clone(), i, fps, dims, pixels)
        })
        .collect::<Result<Vec<_>>>()?;
    RecoverySequence::new(video.video_id.clone(), participant_id, clips)
}
