use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::{synth_sequence, Clip, SynthParams};
use crate::encoder::EncoderConfig;
use crate::tensorcore::{ParamStore, Tensor};

pub fn random(shape: &[usize], std: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, std).unwrap();
    Tensor::from_fn(shape.to_vec(), |_| n.sample(&mut rng))
}

/// Moves every parameter off its initial value so zero-initialized paths
/// carry gradient during checks.
pub fn perturb(store: &mut ParamStore, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, std).unwrap();
    for (_, t) in store.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += n.sample(&mut rng));
    }
}

/// A small encoder for fast checks: 16×16 frames, two frames, one layer per stage.
pub fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        embed_dim: 16,
        heads: 2,
        spatial_layers: 1,
        temporal_layers: 1,
        frames: 2,
        resolution: 16,
        ..EncoderConfig::toy()
    }
}

pub fn synth_clip(config: &EncoderConfig, seed: u64, index: usize) -> Clip {
    let params = SynthParams {
        num_clips: index + 1,
        frames: config.frames,
        height: config.resolution,
        width: config.resolution,
        channels: config.channels,
        seed,
        ..SynthParams::default()
    };
    synth_sequence(&params, "v", "p").unwrap().clips.remove(index)
}
