//! Fixtures shared by the benchmarks.

use breathorder::dataio::{synth_dataset, Clip, SynthParams};
use breathorder::encoder::EncoderConfig;
use breathorder::tensorcore::Tensor;

/// Deterministic dense matrix with entries in [-1, 1).
pub fn matrix(rows: usize, cols: usize, salt: u64) -> Tensor {
    Tensor::from_fn(vec![rows, cols], |i| {
        let h = (i as u64 ^ salt).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 11;
        (h as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

/// Skew-symmetric matrix of side `n`.
pub fn skew_matrix(n: usize, scale: f64) -> Tensor {
    let m = matrix(n, n, 7);
    Tensor::from_fn(vec![n, n], |i| {
        let (r, c) = (i / n, i % n);
        scale * (m.data()[r * n + c] - m.data()[c * n + r]) / 2.0
    })
}

/// One synthetic clip matching `config`.
pub fn clip_for(config: &EncoderConfig) -> Clip {
    let params = SynthParams {
        num_clips: 3,
        frames: config.frames,
        height: config.resolution,
        width: config.resolution,
        channels: config.channels,
        ..SynthParams::default()
    };
    let seq = synth_dataset(&params, 1).expect("synthetic clip").remove(0);
    seq.clips.into_iter().next().expect("first clip")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_well_formed() {
        let s = skew_matrix(4, 1.0);
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(s.at(&[r, c]), -s.at(&[c, r]));
            }
        }
        let config = EncoderConfig::toy();
        assert_eq!(clip_for(&config).dims().frames, config.frames);
    }
}
