use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::sequence::RecoverySequence;

/// Two clips of one sequence in presentation order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairSample {
    pub video_id: String,
    pub first: usize,
    pub second: usize,
}

impl PairSample {
    /// Ground truth: the clip presented first occurred earlier.
    pub fn first_is_earlier(&self) -> bool {
        self.first < self.second
    }

    pub fn separation(&self) -> usize {
        self.first.abs_diff(self.second)
    }

    pub fn swapped(&self) -> Self {
        Self {
            video_id: self.video_id.clone(),
            first: self.second,
            second: self.first,
        }
    }
}

/// Pairs within one sequence whose separation lies in `[min_sep, max_sep]`.
///
/// Every drawn pair is emitted in both presentation orders, so exactly half
/// the samples present the earlier clip first. `max_draws` caps the number of
/// unordered pairs drawn without replacement; `None` takes all of them. The
/// output is shuffled.
pub fn make_pairs(
    sequence: &RecoverySequence,
    min_sep: usize,
    max_sep: usize,
    max_draws: Option<usize>,
    rng: &mut impl Rng,
) -> Result<Vec<PairSample>> {
    if min_sep == 0 {
        return Err(Error::contract("min_sep must be at least 1"));
    }
    let m = sequence.num_clips();
    let admissible: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i + min_sep..m.min(i + max_sep + 1)).map(move |j| (i, j)))
        .collect();
    let drawn: Vec<(usize, usize)> = match max_draws {
        Some(n) if n < admissible.len() => index::sample(rng, admissible.len(), n)
            .into_iter()
            .map(|k| admissible[k])
            .collect(),
        _ => admissible,
    };
    let mut out = Vec::with_capacity(2 * drawn.len());
    for (i, j) in drawn {
        let p = PairSample {
            video_id: sequence.video_id.clone(),
            first: i,
            second: j,
        };
        out.push(p.swapped());
        out.push(p);
    }
    out.shuffle(rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dataio::{Clip, ClipDims};

    fn sequence(m: usize) -> RecoverySequence {
        let clips = (0..m)
            .map(|i| Clip::new("v", i, 1.0, ClipDims::new(1, 1, 1, 1), vec![0.0]).unwrap())
            .collect();
        RecoverySequence::new("v", "p", clips).unwrap()
    }

    #[test]
    fn three_clips_min_sep_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pairs = make_pairs(&sequence(3), 2, 10, None, &mut rng).unwrap();
        pairs.sort_by_key(|p| (p.first, p.second));
        let got: Vec<_> = pairs.iter().map(|p| (p.first, p.second)).collect();
        assert_eq!(got, vec![(0, 2), (2, 0)]);
    }

    #[test]
    fn fifty_clips_are_exactly_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs = make_pairs(&sequence(50), 1, 49, None, &mut rng).unwrap();
        assert_eq!(pairs.len(), 2 * 50 * 49 / 2);
        let earlier = pairs.iter().filter(|p| p.first_is_earlier()).count();
        assert_eq!(2 * earlier, pairs.len());
    }

    #[test]
    fn swapped_presentation_flips_truth() {
        let p = PairSample {
            video_id: "v".into(),
            first: 7,
            second: 2,
        };
        assert!(!p.first_is_earlier());
        assert!(p.swapped().first_is_earlier());
        assert_eq!(p.separation(), 5);
    }

    #[test]
    fn no_admissible_pair_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(make_pairs(&sequence(3), 5, 10, None, &mut rng).unwrap().is_empty());
        assert!(make_pairs(&sequence(3), 0, 10, None, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn pairs_are_balanced_and_within_bounds(
            m in 1usize..30, min_sep in 1usize..8, span in 0usize..30,
            draws in proptest::option::of(0usize..50), seed in any::<u64>(),
        ) {
            let max_sep = min_sep + span;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pairs = make_pairs(&sequence(m), min_sep, max_sep, draws, &mut rng).unwrap();
            let earlier = pairs.iter().filter(|p| p.first_is_earlier()).count();
            prop_assert_eq!(2 * earlier, pairs.len());
            for p in &pairs {
                prop_assert_ne!(p.first, p.second);
                prop_assert_eq!(&p.video_id, "v");
                prop_assert!(p.separation() >= min_sep && p.separation() <= max_sep);
                prop_assert!(p.first < m && p.second < m);
            }
            if let Some(n) = draws {
                prop_assert!(pairs.len() <= 2 * n);
            }
        }
    }
}
