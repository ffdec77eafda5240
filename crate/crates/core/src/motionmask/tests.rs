use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataio::{Clip, ClipDims};

/// `prev` is a window of random texture; `cur` is the same texture moved by `(dy, dx)`.
fn translated_pair(size: usize, dy: i32, dx: i32, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let pad = 8usize;
    let side = size + 2 * pad;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let canvas: Vec<f64> = (0..side * side).map(|_| rng.random()).collect();
    let at = |y: isize, x: isize| canvas[(y + pad as isize) as usize * side + (x + pad as isize) as usize];
    let mut prev = Vec::with_capacity(size * size);
    let mut cur = Vec::with_capacity(size * size);
    for y in 0..size as isize {
        for x in 0..size as isize {
            prev.push(at(y, x));
            cur.push(at(y - dy as isize, x - dx as isize));
        }
    }
    (prev, cur)
}

fn flow_of(prev: &[f64], cur: &[f64], size: usize, tile: usize, radius: usize) -> FlowGrid {
    tile_flow(
        GrayFrame::new(size, size, prev).unwrap(),
        GrayFrame::new(size, size, cur).unwrap(),
        tile,
        radius,
    )
    .unwrap()
}

fn interior(grid: &FlowGrid) -> impl Iterator<Item = (usize, usize)> + '_ {
    (1..grid.rows - 1).flat_map(move |r| (1..grid.cols - 1).map(move |c| (r, c)))
}

#[test]
fn identical_frames_have_zero_flow() {
    let (prev, _) = translated_pair(32, 0, 0, 1);
    let grid = flow_of(&prev, &prev, 32, 8, 4);
    assert!(grid.vectors.iter().all(|&v| v == (0, 0)));
}

#[test]
fn right_shift_by_three() {
    let (prev, cur) = translated_pair(32, 0, 3, 2);
    let grid = flow_of(&prev, &cur, 32, 8, 4);
    for (r, c) in interior(&grid) {
        assert_eq!(grid.at(r, c), (0, 3));
    }
}

#[test]
fn shift_beyond_radius_stays_in_window() {
    let (prev, cur) = translated_pair(32, 0, 6, 3);
    let grid = flow_of(&prev, &cur, 32, 8, 4);
    for &(dy, dx) in &grid.vectors {
        assert!(dy.abs() <= 4 && dx.abs() <= 4);
        assert!(f64::from(dy * dy + dx * dx).sqrt() <= 4.0 * 2f64.sqrt());
    }
}

#[test]
fn flat_regions_prefer_zero_then_small_dy_dx() {
    let flat = vec![0.5; 16 * 16];
    assert!(flow_of(&flat, &flat, 16, 8, 4).vectors.iter().all(|&v| v == (0, 0)));
}

#[test]
fn tiling_and_shape_errors() {
    let a = vec![0.0; 30 * 30];
    let f = GrayFrame::new(30, 30, &a).unwrap();
    assert!(tile_flow(f, f, 8, 4).is_err());
    let b = vec![0.0; 32 * 32];
    let g = GrayFrame::new(32, 32, &b).unwrap();
    assert!(matches!(tile_flow(f, g, 2, 4), Err(crate::Error::Shape { .. })));
    assert!(tile_flow(g, g, 8, 0).is_err());
}

#[test]
fn magnitudes_are_norms() {
    let grid = FlowGrid {
        rows: 1,
        cols: 4,
        tile_size: 1,
        vectors: vec![(0, 0), (3, 4), (-1, 0), (-2, 2)],
    };
    let m = motion_magnitude(&grid);
    let expect: Vec<f64> = grid
        .vectors
        .iter()
        .map(|&(a, b)| (f64::from(a).powi(2) + f64::from(b).powi(2)).sqrt())
        .collect();
    assert_eq!(m[1], 5.0);
    assert_eq!(m, expect);
}

fn grid(rows: usize, cols: usize, frames: usize, mags: Vec<f64>) -> MotionGrid {
    MotionGrid::new(frames, rows, cols, 16, mags).unwrap()
}

#[test]
fn full_scale_grid_keeps_forty() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mags = (0..2 * 196).map(|_| rng.random_range(0.0..5.0)).collect();
    let mask = select_tiles(&grid(14, 14, 2, mags), 0.2).unwrap();
    assert_eq!(mask.kept_in_frame(0), 40);
    assert_eq!(mask.kept_in_frame(1), 40);
}

#[test]
fn equal_magnitudes_keep_first_tiles() {
    let mask = select_tiles(&grid(4, 4, 1, vec![1.0; 16]), 0.2).unwrap();
    let kept: Vec<usize> = (0..16).filter(|&i| mask.keep[i]).collect();
    assert_eq!(kept, vec![0, 1, 2, 3]);
    let all = select_tiles(&grid(4, 4, 1, vec![1.0; 16]), 1.0).unwrap();
    assert!(all.keep.iter().all(|&k| k));
}

#[test]
fn keep_count_is_robust_to_rounding() {
    assert_eq!(keep_count(0.2, 196).unwrap(), 40);
    assert_eq!(keep_count(0.2, 16).unwrap(), 4);
    assert_eq!(keep_count(0.7, 10).unwrap(), 7);
    assert_eq!(keep_count(0.01, 10).unwrap(), 1);
    assert!(keep_count(0.0, 10).is_err());
    assert!(keep_count(1.5, 10).is_err());
}

fn random_clip(seed: u64, frames: usize, size: usize, channels: usize) -> Clip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = ClipDims::new(frames, size, size, channels);
    let px = (0..dims.numel()).map(|_| rng.random::<f32>()).collect();
    Clip::new("v", 0, 1.0, dims, px).unwrap()
}

#[test]
fn full_scale_frame_blackens_156_tiles() {
    let clip = random_clip(5, 2, 224, 1);
    let config = MgmConfig::default();
    let out = motion_guided_mask(&clip, &config).unwrap();
    for t in 0..2 {
        let frame = out.clip.frame(t);
        let zero_tiles = (0..196)
            .filter(|&i| {
                let (r, c) = (i / 14, i % 14);
                (0..16).all(|y| (0..16).all(|x| frame[(r * 16 + y) * 224 + c * 16 + x] == 0.0))
            })
            .count();
        assert_eq!(zero_tiles, 156);
    }
}

#[test]
fn full_keep_is_identity_and_static_clip_keeps_first_tiles() {
    let clip = random_clip(6, 3, 32, 3);
    let out = motion_guided_mask(
        &clip,
        &MgmConfig {
            tile_size: 8,
            keep_ratio: 1.0,
            ..MgmConfig::default()
        },
    )
    .unwrap();
    assert_eq!(out.clip, clip);

    let frame: Vec<f32> = clip.frame(0).to_vec();
    let still = Clip::new("v", 0, 1.0, clip.dims(), frame.repeat(3)).unwrap();
    let out = motion_guided_mask(
        &still,
        &MgmConfig {
            tile_size: 8,
            ..MgmConfig::default()
        },
    )
    .unwrap();
    for t in 0..3 {
        let kept: Vec<usize> = (0..16).filter(|&i| out.mask.frame(t)[i]).collect();
        assert_eq!(kept, vec![0, 1, 2, 3]);
    }
}

#[test]
fn frame_zero_borrows_first_pair() {
    let (a, b) = translated_pair(16, 2, 1, 7);
    let (_, c) = translated_pair(16, 0, 0, 8);
    let frames: Vec<f32> = [a, b, c].concat().iter().map(|&v| v as f32).collect();
    let clip = Clip::new("v", 0, 1.0, ClipDims::new(3, 16, 16, 1), frames).unwrap();
    let motion = clip_motion(&clip, 8, 4, MotionScorer::Sad).unwrap();
    assert_eq!(motion.frame(0), motion.frame(1));
}

#[test]
fn absdiff_scorer() {
    let prev = vec![0.0; 16];
    let mut cur = vec![0.0; 16];
    cur[0] = 1.0;
    let s = tile_absdiff(
        GrayFrame::new(4, 4, &prev).unwrap(),
        GrayFrame::new(4, 4, &cur).unwrap(),
        2,
    )
    .unwrap();
    assert_eq!(s, vec![0.25, 0.0, 0.0, 0.0]);
}

#[test]
fn misaligned_mask_rejected() {
    let clip = random_clip(9, 2, 16, 1);
    let mask = select_tiles(&grid(4, 4, 2, vec![0.0; 32]), 0.5).unwrap();
    assert!(apply_mask(&clip, &mask).is_err());
}

#[test]
fn previews_are_written() {
    let clip = random_clip(10, 2, 16, 3);
    let out = motion_guided_mask(
        &clip,
        &MgmConfig {
            tile_size: 8,
            ..MgmConfig::default()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_previews(dir.path(), &clip, &out.motion, &out.mask).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("tiles.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
    assert!(dir.path().join("heat_001.pgm").exists());
    assert!(dir.path().join("overlay_000.ppm").exists());
}

proptest! {
    #[test]
    fn interior_translations_are_recovered(dy in -4i32..=4, dx in -4i32..=4, seed in any::<u64>()) {
        let (prev, cur) = translated_pair(32, dy, dx, seed);
        let grid = flow_of(&prev, &cur, 32, 8, 4);
        for (r, c) in interior(&grid) {
            prop_assert_eq!(grid.at(r, c), (dy, dx));
        }
    }

    #[test]
    fn keep_count_and_scaling_invariance(
        rows in 1usize..8, cols in 1usize..8, ratio in 0.01f64..=1.0,
        scale in 0.01f64..100.0, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rows * cols;
        let mags: Vec<f64> = (0..2 * n).map(|_| f64::from(rng.random_range(0u8..6))).collect();
        let base = select_tiles(&grid(rows, cols, 2, mags.clone()), ratio).unwrap();
        let k = keep_count(ratio, n).unwrap();
        prop_assert_eq!(k, ((ratio * n as f64) - 1e-9).ceil().max(1.0) as usize);
        prop_assert_eq!(base.kept_in_frame(0), k);
        prop_assert_eq!(base.kept_in_frame(1), k);
        let scaled = select_tiles(&grid(rows, cols, 2, mags.iter().map(|m| m * scale).collect()), ratio).unwrap();
        prop_assert_eq!(base, scaled);
    }

    #[test]
    fn masking_is_idempotent_and_exact(seed in any::<u64>(), ratio in 0.05f64..=1.0) {
        let clip = random_clip(seed, 3, 16, 2);
        let config = MgmConfig { tile_size: 4, keep_ratio: ratio, ..MgmConfig::default() };
        let out = motion_guided_mask(&clip, &config).unwrap();
        prop_assert_eq!(apply_mask(&out.clip, &out.mask).unwrap(), out.clip.clone());
        let (c, w) = (2, 16);
        for t in 0..3 {
            let keep = out.mask.frame(t);
            for (i, (&o, &m)) in clip.frame(t).iter().zip(out.clip.frame(t)).enumerate() {
                let (y, x) = (i / c / w, (i / c) % w);
                if keep[(y / 4) * 4 + x / 4] {
                    prop_assert_eq!(o.to_bits(), m.to_bits());
                } else {
                    prop_assert_eq!(m.to_bits(), 0f32.to_bits());
                }
            }
        }
    }
}
