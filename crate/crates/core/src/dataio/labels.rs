use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Proxy shortness-of-breath label derived from sequence position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeakLabel {
    #[serde(rename = "SOB")]
    Sob,
    #[serde(rename = "NoSOB")]
    NoSob,
    Excluded,
}

impl WeakLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            WeakLabel::Sob => "SOB",
            WeakLabel::NoSob => "NoSOB",
            WeakLabel::Excluded => "Excluded",
        }
    }
}

/// Thirds rule: with `k = floor(M/3)`, the first `k` clips are SOB, the last
/// `k` are NoSOB and the middle is excluded.
pub fn weak_label(clip_index: usize, num_clips: usize) -> Result<WeakLabel> {
    if num_clips < 3 {
        return Err(Error::InsufficientSequence(num_clips));
    }
    if clip_index >= num_clips {
        return Err(Error::contract(format!(
            "clip index {clip_index} out of range for {num_clips} clips"
        )));
    }
    let k = num_clips / 3;
    Ok(if clip_index < k {
        WeakLabel::Sob
    } else if clip_index >= num_clips - k {
        WeakLabel::NoSob
    } else {
        WeakLabel::Excluded
    })
}
