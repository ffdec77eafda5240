use breathorder::dataio::{synth_sequence, SynthParams};
use breathorder::motionmask::{clip_motion, MotionScorer};

fn motion_profile(params: &SynthParams, video: &str) -> Vec<(f64, f64)> {
    let seq = synth_sequence(params, video, "p").unwrap();
    seq.clips
        .iter()
        .map(|c| {
            let m = clip_motion(c, 8, 4, MotionScorer::Sad).unwrap();
            (m.mean(), m.max())
        })
        .collect()
}

#[test]
fn first_clip_moves_at_least_as_much_as_last() {
    let params = SynthParams::default();
    for seed in 0..5 {
        let profile = motion_profile(&SynthParams { seed, ..params.clone() }, "v");
        assert!(profile[0].1 >= profile[11].1, "seed {seed}: {profile:?}");
    }
}

#[test]
fn mean_motion_decreases_along_the_sequence() {
    let seeds = 20;
    let mut mean = vec![0.0; 12];
    for seed in 0..seeds {
        let params = SynthParams {
            seed,
            ..SynthParams::default()
        };
        for (i, (m, _)) in motion_profile(&params, &format!("v{seed}")).into_iter().enumerate() {
            mean[i] += m / seeds as f64;
        }
    }
    for w in mean.windows(2) {
        assert!(w[0] > w[1], "{mean:?}");
    }
}
