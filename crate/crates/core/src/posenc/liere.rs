//! LieRE: rotations `R(p) = exp(x·A_x + y·A_y + t·A_t)` built from learned
//! skew-symmetric generators, applied to queries and keys.
//!
//! Generators are block-diagonal (`b × b` blocks covering the head
//! dimension) and shared by all heads and layers. The exponential is a
//! truncated Taylor series with scaling and squaring, recorded on the tape
//! so the generators receive gradients.

use rand::Rng;

use super::PositionCoord;
use crate::error::{Error, Result};
use crate::tensorcore::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

pub const DEFAULT_BLOCK: usize = 8;
pub const DEFAULT_TAYLOR_TERMS: usize = 12;
pub const DEFAULT_INIT_STD: f64 = 0.2;

/// Scaled matrices must satisfy `‖A‖₁ / 2^s <= MAX_SCALED_NORM`.
const MAX_SCALED_NORM: f64 = 0.5;

/// `U - Uᵀ` over the last two axes.
pub fn skew(tape: &mut Tape, u: Var) -> Result<Var> {
    let shape = tape.shape(u);
    let r = shape.len();
    if r < 2 || shape[r - 1] != shape[r - 2] {
        return Err(Error::contract(format!("skew needs square blocks, got {shape:?}")));
    }
    let ut = tape.transpose(u, r - 2, r - 1)?;
    tape.sub(u, ut)
}

/// Smallest `s` with `max_i ‖A_i‖₁ / 2^s <= 0.5` over a batch `[.., b, b]`.
pub fn squarings_for(a: &Tensor) -> u32 {
    let shape = a.shape();
    let b = shape[shape.len() - 1];
    let mut norm = 0.0f64;
    for m in a.data().chunks(b * b) {
        for col in 0..b {
            let s: f64 = (0..b).map(|row| m[row * b + col].abs()).sum();
            norm = norm.max(s);
        }
    }
    let mut s = 0;
    while norm / 2f64.powi(s as i32) > MAX_SCALED_NORM {
        s += 1;
    }
    s
}

/// Matrix exponential of a batch of square blocks `[.., b, b]`.
///
/// Uses `num_terms` Taylor terms (degree `num_terms - 1`) evaluated by
/// Horner's rule after scaling by `2^-s`, then squares `s` times. A zero
/// input yields exactly the identity.
pub fn expm_skew(tape: &mut Tape, a: Var, num_terms: usize) -> Result<Var> {
    if num_terms < 2 {
        return Err(Error::Config("expm needs at least 2 Taylor terms".into()));
    }
    let shape = tape.shape(a).to_vec();
    let r = shape.len();
    if r < 2 || shape[r - 1] != shape[r - 2] {
        return Err(Error::contract(format!("expm needs square blocks, got {shape:?}")));
    }
    let b = shape[r - 1];
    let batch = tape.value(a).numel() / (b * b);
    let s = squarings_for(tape.value(a));

    let a3 = tape.reshape(a, &[batch, b, b])?;
    let x = tape.scale(a3, 0.5f64.powi(s as i32))?;
    let ident = tape.constant(Tensor::eye(b));
    // Horner: R = I + X/k · R, for k = K-1 down to 1, starting from R = I.
    let top = tape.scale(x, 1.0 / (num_terms - 1) as f64)?;
    let mut rot = tape.add_broadcast(top, ident)?;
    for k in (1..num_terms - 1).rev() {
        let xr = tape.bmm(x, rot)?;
        let xr = tape.scale(xr, 1.0 / k as f64)?;
        rot = tape.add_broadcast(xr, ident)?;
    }
    for _ in 0..s {
        rot = tape.bmm(rot, rot)?;
    }
    tape.reshape(rot, &shape)
}

/// Value-level [`expm_skew`].
pub fn expm_skew_tensor(a: &Tensor, num_terms: usize) -> Result<Tensor> {
    if !a.is_finite() {
        return Err(Error::NonFinite("expm_skew input".into()));
    }
    let mut tape = Tape::new();
    let v = tape.constant(a.clone());
    let r = expm_skew(&mut tape, v, num_terms)?;
    Ok(tape.value(r).clone())
}

/// Block-diagonal `R(p)` as `[nb, b, b]` from raw generator parameters
/// `U_x, U_y, U_t` (each `[nb, b, b]`).
pub fn rotation_for_position(tape: &mut Tape, gens: [Var; 3], p: PositionCoord, num_terms: usize) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (u, w) in gens.into_iter().zip(p.axes()) {
        let a = skew(tape, u)?;
        let term = tape.scale(a, w)?;
        acc = Some(match acc {
            Some(prev) => tape.add(prev, term)?,
            None => term,
        });
    }
    expm_skew(tape, acc.expect("three axes"), num_terms)
}

/// Rotates per-token query and key heads.
///
/// `q`, `k` are `[B, H, N, d_h]`; `rots` is `[G, N, nb, b, b]` (see
/// [`Tape::rotate_blocks`]). CLS tokens carry [`PositionCoord::ORIGIN`], whose
/// rotation is exactly the identity.
pub fn rotate_qk(tape: &mut Tape, q: Var, k: Var, rots: Var) -> Result<(Var, Var)> {
    Ok((tape.rotate_blocks(q, rots)?, tape.rotate_blocks(k, rots)?))
}

/// Learned LieRE generator set.
#[derive(Clone, Debug)]
pub struct LieRE {
    pub generators: [ParamId; 3],
    pub block: usize,
    pub num_blocks: usize,
    pub num_terms: usize,
}

impl LieRE {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        head_dim: usize,
        block: usize,
        init_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if block == 0 || !head_dim.is_multiple_of(block) {
            return Err(Error::Config(format!(
                "head dimension {head_dim} is not divisible by LieRE block size {block}"
            )));
        }
        let nb = head_dim / block;
        let mut ids = Vec::with_capacity(3);
        for axis in ["x", "y", "t"] {
            ids.push(store.add_normal(format!("{prefix}.u_{axis}"), &[nb, block, block], init_std, rng)?);
        }
        Ok(Self {
            generators: [ids[0], ids[1], ids[2]],
            block,
            num_blocks: nb,
            num_terms: DEFAULT_TAYLOR_TERMS,
        })
    }

    /// Rotations for every coordinate, shaped `[N, nb, b, b]`.
    pub fn rotations(&self, tape: &mut Tape, p: &Bound, coords: &[PositionCoord]) -> Result<Var> {
        let (nb, b) = (self.num_blocks, self.block);
        let vars = self.generators.map(|id| p[id]);
        rotations_from_generators(tape, vars, nb, b, coords, self.num_terms)
    }
}

fn rotations_from_generators(
    tape: &mut Tape,
    gens: [Var; 3],
    nb: usize,
    b: usize,
    coords: &[PositionCoord],
    num_terms: usize,
) -> Result<Var> {
    if coords.is_empty() {
        return Err(Error::contract("no positions to rotate"));
    }
    let mut flat = Vec::with_capacity(3);
    for u in gens {
        let a = skew(tape, u)?;
        flat.push(tape.reshape(a, &[1, nb * b * b])?);
    }
    let stacked = tape.concat(&flat, 0)?;
    let pos = Tensor::new(vec![coords.len(), 3], coords.iter().flat_map(|c| c.axes()).collect())?;
    let pos = tape.constant(pos);
    let mixed = tape.matmul(pos, stacked)?;
    let mixed = tape.reshape(mixed, &[coords.len() * nb, b, b])?;
    let rot = expm_skew(tape, mixed, num_terms)?;
    tape.reshape(rot, &[coords.len(), nb, b, b])
}
