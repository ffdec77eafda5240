//! The full finite-difference gradient suite: every differentiable tape
//! operation, the matrix exponential, a transformer block, the toy-scale
//! encoder, both two-tower heads and the prototype loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::dataio::{synth_sequence, Clip, SynthParams, WeakLabel};
use crate::encoder::{transformer_block, AttentionParams, BlockParams, Encoder, EncoderConfig, PosEncMode};
use crate::error::Result;
use crate::heads::{pair_bce, prototype_loss, PrototypePair, TwoTowerCls, TwoTowerFull};
use crate::posenc::{expm_skew, skew, spatial_coords, LieRE, DEFAULT_TAYLOR_TERMS};
use crate::tensorcore::{grad_check, grad_check_params, Bound, ParamStore, Tape, Tensor, Var, FD_STEP};

/// Pass threshold on the maximum relative error.
pub const GRAD_TOL: f64 = 1e-4;

/// Seeds used when none are given.
pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];

/// Sampled coordinates per parameter tensor for whole-model checks.
const MODEL_COORDS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckRow {
    pub name: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn row(name: impl Into<String>, seed: u64, err: f64) -> GradCheckRow {
    GradCheckRow {
        name: name.into(),
        seed,
        max_rel_error: err,
        passed: err < GRAD_TOL,
    }
}

fn uniform(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn perturb(store: &mut ParamStore, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, std).expect("positive std");
    for (_, t) in store.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += n.sample(&mut rng));
    }
}

/// `sum(w ⊙ y)` with fixed random weights, so every output coordinate counts.
fn probe(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let w = tape.constant(uniform(tape.shape(y), seed ^ 0x5eed));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type Unary = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;
type Binary = fn(&mut Tape, Var, Var) -> Result<Var>;
type UnaryCase = (&'static str, fn(f64) -> f64, Unary);

/// Input transform keeping each op away from kinks and domain edges.
fn unary_ops() -> Vec<UnaryCase> {
    vec![
        ("gelu", |v| 2.0 * v, Box::new(|t, v| t.gelu(v))),
        ("exp", |v| v, Box::new(|t, v| t.exp(v))),
        ("log", |v| v * v + 0.5, Box::new(|t, v| t.log(v))),
        ("sqrt", |v| v * v + 0.5, Box::new(|t, v| t.sqrt(v))),
        ("softplus", |v| 3.0 * v, Box::new(|t, v| t.softplus(v))),
        (
            "relu",
            |v| if v.abs() < 0.05 { v + 0.1 } else { v },
            Box::new(|t, v| t.relu(v)),
        ),
        ("scale", |v| v, Box::new(|t, v| t.scale(v, -2.5))),
        ("neg", |v| v, Box::new(|t, v| t.neg(v))),
        ("add_scalar", |v| v, Box::new(|t, v| t.add_scalar(v, 3.0))),
        ("softmax", |v| 2.0 * v, Box::new(|t, v| t.softmax(v, 1))),
        ("reshape", |v| v, Box::new(|t, v| t.reshape(v, &[3, 8]))),
        ("permute", |v| v, Box::new(|t, v| t.permute(v, &[2, 0, 1]))),
        ("transpose", |v| v, Box::new(|t, v| t.transpose(v, 1, 2))),
        ("slice", |v| v, Box::new(|t, v| t.slice(v, 2, 1, 3))),
        (
            "concat",
            |v| v,
            Box::new(|t, v| {
                let w = t.scale(v, 2.0)?;
                t.concat(&[v, w, v], 1)
            }),
        ),
        ("sum", |v| v, Box::new(|t, v| t.sum(v))),
        ("mean", |v| v, Box::new(|t, v| t.mean(v))),
        ("sum_axis", |v| v, Box::new(|t, v| t.sum_axis(v, 1))),
        ("mean_axis", |v| v, Box::new(|t, v| t.mean_axis(v, 2))),
        ("index_select", |v| v, Box::new(|t, v| t.index_select(v, &[1, 0, 2, 1]))),
        ("expand_leading", |v| v, Box::new(|t, v| t.expand_leading(v, 3))),
    ]
}

fn unary_checks(seed: u64, out: &mut Vec<GradCheckRow>) -> Result<()> {
    for (name, map, op) in unary_ops() {
        let x = uniform(&[3, 2, 4], seed);
        let x = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| map(v)).collect())?;
        let err = grad_check(
            |t, v| {
                let y = op(t, v)?;
                probe(t, y, seed)
            },
            &x,
            FD_STEP,
        )?;
        out.push(row(name, seed, err));
    }
    Ok(())
}

/// Checks `op` with respect to each operand in turn.
fn binary_check(name: &str, op: Binary, a: &Tensor, b: &Tensor, seed: u64) -> Result<GradCheckRow> {
    let ea = grad_check(
        |t, v| {
            let bv = t.constant(b.clone());
            let y = op(t, v, bv)?;
            probe(t, y, seed)
        },
        a,
        FD_STEP,
    )?;
    let eb = grad_check(
        |t, v| {
            let av = t.constant(a.clone());
            let y = op(t, av, v)?;
            probe(t, y, seed)
        },
        b,
        FD_STEP,
    )?;
    Ok(row(name, seed, ea.max(eb)))
}

fn binary_checks(seed: u64, out: &mut Vec<GradCheckRow>) -> Result<()> {
    let a = uniform(&[2, 3], seed);
    let b = Tensor::from_fn(vec![2, 3], |i| 1.5 + (i as f64 * 0.3 + seed as f64).sin());
    let ops: [(&str, Binary); 4] = [
        ("add", |t, x, y| t.add(x, y)),
        ("sub", |t, x, y| t.sub(x, y)),
        ("mul", |t, x, y| t.mul(x, y)),
        ("div", |t, x, y| t.div(x, y)),
    ];
    for (name, op) in ops {
        out.push(binary_check(name, op, &a, &b, seed)?);
    }
    let (m, v) = (uniform(&[2, 3, 4], seed + 1), uniform(&[3, 4], seed + 2));
    out.push(binary_check(
        "add_broadcast",
        |t, x, y| t.add_broadcast(x, y),
        &m,
        &v,
        seed,
    )?);
    out.push(binary_check(
        "mul_broadcast",
        |t, x, y| t.mul_broadcast(x, y),
        &m,
        &v,
        seed,
    )?);
    let (p, q) = (uniform(&[3, 4], seed + 3), uniform(&[4, 2], seed + 4));
    out.push(binary_check("matmul", |t, x, y| t.matmul(x, y), &p, &q, seed)?);
    let (p, q) = (uniform(&[2, 2, 3, 4], seed + 5), uniform(&[2, 2, 4, 3], seed + 6));
    out.push(binary_check("bmm", |t, x, y| t.bmm(x, y), &p, &q, seed)?);
    let (x, r) = (uniform(&[4, 2, 3, 4], seed + 7), uniform(&[2, 3, 2, 2, 2], seed + 8));
    out.push(binary_check(
        "rotate_blocks",
        |t, x, r| t.rotate_blocks(x, r),
        &x,
        &r,
        seed,
    )?);
    Ok(())
}

fn layernorm_check(seed: u64) -> Result<GradCheckRow> {
    let x = uniform(&[3, 6], seed);
    let g = Tensor::from_fn(vec![6], |i| 1.0 + 0.1 * i as f64);
    let b = uniform(&[6], seed + 1);
    let lx = grad_check(
        |t, v| {
            let (gv, bv) = (t.constant(g.clone()), t.constant(b.clone()));
            let y = t.layernorm(v, gv, bv, 1e-5)?;
            probe(t, y, seed)
        },
        &x,
        FD_STEP,
    )?;
    let lg = grad_check(
        |t, v| {
            let (xv, bv) = (t.constant(x.clone()), t.constant(b.clone()));
            let y = t.layernorm(xv, v, bv, 1e-5)?;
            probe(t, y, seed)
        },
        &g,
        FD_STEP,
    )?;
    let lb = grad_check(
        |t, v| {
            let (xv, gv) = (t.constant(x.clone()), t.constant(g.clone()));
            let y = t.layernorm(xv, gv, v, 1e-5)?;
            probe(t, y, seed)
        },
        &b,
        FD_STEP,
    )?;
    Ok(row("layernorm", seed, lx.max(lg).max(lb)))
}

fn expm_check(seed: u64) -> Result<GradCheckRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, 0.5).expect("positive std");
    let u = Tensor::from_fn(vec![2, 4, 4], |_| n.sample(&mut rng));
    let err = grad_check(
        |t, v| {
            let a = skew(t, v)?;
            let r = expm_skew(t, a, DEFAULT_TAYLOR_TERMS)?;
            probe(t, r, seed)
        },
        &u,
        FD_STEP,
    )?;
    Ok(row("expm_skew", seed, err))
}

fn worst(report: &[crate::tensorcore::ParamCheck]) -> f64 {
    report.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
}

fn block_check(seed: u64) -> Result<GradCheckRow> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = BlockParams::register(&mut store, "b", 16, 2, &mut rng)?;
    let cross = AttentionParams::register(&mut store, "c", 16, 0.0, &mut rng)?;
    let liere = LieRE::register(&mut store, "l", 8, 4, 0.2, &mut rng)?;
    perturb(&mut store, 0.1, seed + 10);
    let x = uniform(&[2, 5, 16], seed + 20);
    let coords = spatial_coords(2, 1);
    let report = grad_check_params(
        &store,
        |t, p| {
            let r = liere.rotations(t, p, &coords)?;
            let r = t.reshape(r, &[1, 5, 2, 4, 4])?;
            let xv = t.constant(x.clone());
            let y = transformer_block(t, p, &block, xv, Some(r), Some(&cross), 2)?;
            probe(t, y, seed)
        },
        FD_STEP,
        6,
        seed,
    )?;
    Ok(row("transformer_block", seed, worst(&report)))
}

fn clip_for(config: &EncoderConfig, seed: u64, index: usize) -> Result<Clip> {
    let params = SynthParams {
        num_clips: index + 1,
        frames: config.frames,
        height: config.resolution,
        width: config.resolution,
        channels: config.channels,
        seed,
        ..SynthParams::default()
    };
    Ok(synth_sequence(&params, "g", "g")?.clips.remove(index))
}

fn encoder_check(posenc: PosEncMode, seed: u64) -> Result<GradCheckRow> {
    let config = EncoderConfig {
        posenc,
        seed,
        ..EncoderConfig::toy()
    };
    let mut store = ParamStore::new();
    let encoder = Encoder::register(&config, &mut store, &mut ChaCha8Rng::seed_from_u64(seed))?;
    perturb(&mut store, 0.05, seed + 100);
    let clip = encoder.prepare(&clip_for(&config, seed, 0)?)?;
    let report = grad_check_params(
        &store,
        |t, p| {
            let e = encoder.embed(t, p, &[&clip])?;
            probe(t, e, seed)
        },
        FD_STEP,
        MODEL_COORDS,
        seed,
    )?;
    Ok(row(
        format!("encode_clip[toy,{}]", posenc_name(posenc)),
        seed,
        worst(&report),
    ))
}

fn posenc_name(p: PosEncMode) -> &'static str {
    match p {
        PosEncMode::Ape => "ape",
        PosEncMode::Liere => "liere",
    }
}

/// Two-tower heads on a reduced encoder: 16 wide, 2 frames of 16×16.
fn head_config(seed: u64) -> EncoderConfig {
    EncoderConfig {
        embed_dim: 16,
        heads: 2,
        spatial_layers: 1,
        temporal_layers: 1,
        frames: 2,
        resolution: 16,
        seed,
        ..EncoderConfig::toy()
    }
}

fn two_tower_checks(seed: u64, out: &mut Vec<GradCheckRow>) -> Result<()> {
    let config = head_config(seed);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
    let encoder = Encoder::register(&config, &mut store, &mut rng)?;
    let full = TwoTowerFull::register(&mut store, &encoder, &mut rng)?;
    let cls = TwoTowerCls::register(&mut store, &encoder, &mut rng)?;
    perturb(&mut store, 0.05, seed);
    let a = encoder.prepare(&clip_for(&config, seed, 0)?)?;
    let b = encoder.prepare(&clip_for(&config, seed, 2)?)?;
    type Logits<'a> = Box<dyn Fn(&mut Tape, &Bound) -> Result<Var> + 'a>;
    let heads: [(&str, Logits); 2] = [
        (
            "tt_full",
            Box::new(|t, p| full.logits(t, p, &encoder, &[&a, &b], &[&b, &a])),
        ),
        (
            "tt_cls",
            Box::new(|t, p| cls.logits(t, p, &encoder, &[&a, &b], &[&b, &a])),
        ),
    ];
    for (name, logits) in heads {
        let report = grad_check_params(
            &store,
            |t, p| {
                let z = logits(t, p)?;
                pair_bce(t, z, &[true, false])
            },
            FD_STEP,
            MODEL_COORDS,
            seed,
        )?;
        out.push(row(name, seed, worst(&report)));
    }
    Ok(())
}

fn prototype_check(seed: u64) -> Result<GradCheckRow> {
    let mut store = ParamStore::new();
    let pair = PrototypePair::register(&mut store, 8, &mut ChaCha8Rng::seed_from_u64(seed))?;
    perturb(&mut store, 0.3, seed);
    let e = uniform(&[4, 8], seed + 5);
    let labels = [WeakLabel::Sob, WeakLabel::NoSob, WeakLabel::NoSob, WeakLabel::Sob];
    let report = grad_check_params(
        &store,
        |t, p| {
            let ev = t.constant(e.clone());
            prototype_loss(t, p, &pair, ev, &labels, 0.1)
        },
        FD_STEP,
        8,
        seed,
    )?;
    Ok(row("prototype_loss", seed, worst(&report)))
}

/// Runs every check once per seed.
pub fn gradient_suite(seeds: &[u64]) -> Result<Vec<GradCheckRow>> {
    let mut out = Vec::new();
    for &seed in seeds {
        unary_checks(seed, &mut out)?;
        binary_checks(seed, &mut out)?;
        out.push(layernorm_check(seed)?);
        out.push(expm_check(seed)?);
        out.push(block_check(seed)?);
        out.push(encoder_check(PosEncMode::Liere, seed)?);
        out.push(encoder_check(PosEncMode::Ape, seed)?);
        two_tower_checks(seed, &mut out)?;
        out.push(prototype_check(seed)?);
    }
    Ok(out)
}
