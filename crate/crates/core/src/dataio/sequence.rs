use crate::error::{Error, Result};

use super::clip::Clip;
use super::labels::{weak_label, WeakLabel};

/// Ordered clips of one recovery recording. Lower index means earlier, and
/// earlier means more short of breath.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoverySequence {
    pub video_id: String,
    pub participant_id: String,
    pub clips: Vec<Clip>,
}

impl RecoverySequence {
    pub fn new(video_id: impl Into<String>, participant_id: impl Into<String>, clips: Vec<Clip>) -> Result<Self> {
        let video_id = video_id.into();
        if clips.is_empty() {
            return Err(Error::EmptySequence);
        }
        let dims = clips[0].dims();
        for (i, c) in clips.iter().enumerate() {
            if c.clip_index != i {
                return Err(Error::Dataset(format!(
                    "{video_id}: clip at position {i} has index {}",
                    c.clip_index
                )));
            }
            if c.video_id != video_id {
                return Err(Error::Dataset(format!(
                    "{video_id}: clip {i} belongs to {}",
                    c.video_id
                )));
            }
            if c.dims() != dims {
                return Err(Error::Dataset(format!(
                    "{video_id}: clip {i} has dims {:?}, expected {dims:?}",
                    c.dims()
                )));
            }
        }
        Ok(Self {
            video_id,
            participant_id: participant_id.into(),
            clips,
        })
    }

    pub fn num_clips(&self) -> usize {
        self.clips.len()
    }

    pub fn labels(&self) -> Result<Vec<WeakLabel>> {
        let m = self.num_clips();
        (0..m).map(|i| weak_label(i, m)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::ClipDims;

    fn clip(id: &str, index: usize) -> Clip {
        Clip::new(id, index, 1.0, ClipDims::new(1, 1, 1, 1), vec![0.0]).unwrap()
    }

    #[test]
    fn indices_must_be_consecutive() {
        assert!(RecoverySequence::new("v", "p", vec![clip("v", 0), clip("v", 1)]).is_ok());
        assert!(RecoverySequence::new("v", "p", vec![clip("v", 0), clip("v", 2)]).is_err());
        assert!(RecoverySequence::new("v", "p", vec![clip("v", 0), clip("w", 1)]).is_err());
        assert!(RecoverySequence::new("v", "p", vec![]).is_err());
    }

    #[test]
    fn thirds_partition() {
        for m in 3..40 {
            let clips = (0..m).map(|i| clip("v", i)).collect();
            let labels = RecoverySequence::new("v", "p", clips).unwrap().labels().unwrap();
            let count = |l| labels.iter().filter(|&&x| x == l).count();
            assert_eq!(count(WeakLabel::Sob), m / 3);
            assert_eq!(count(WeakLabel::NoSob), m / 3);
            assert_eq!(count(WeakLabel::Excluded), m - 2 * (m / 3));
        }
    }
}
