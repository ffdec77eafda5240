//! Pre-norm transformer blocks with optional LieRE rotations and optional
//! cross-attention to a partner token set.

use rand::Rng;

use crate::error::Result;
use crate::tensorcore::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Standard deviation for CLS tokens and position tables.
pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;

/// Glorot normal standard deviation for a `fan_in → fan_out` projection.
pub fn xavier_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn register(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{prefix}.g"), Tensor::full(vec![dim], 1.0))?,
            bias: store.add(format!("{prefix}.b"), Tensor::zeros(vec![dim]))?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.layernorm(x, p[self.gain], p[self.bias], LN_EPS)
    }
}

/// `x · W + b` over the last axis of any-rank `x`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut l = Self::register_without_bias(store, prefix, fan_in, fan_out, std, rng)?;
        l.bias = Some(store.add(format!("{prefix}.b"), Tensor::zeros(vec![fan_out]))?);
        Ok(l)
    }

    pub fn register_without_bias<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = if std > 0.0 {
            store.add_normal(format!("{prefix}.w"), &[fan_in, fan_out], std, rng)?
        } else {
            store.add(format!("{prefix}.w"), Tensor::zeros(vec![fan_in, fan_out]))?
        };
        Ok(Self {
            weight,
            bias: None,
            fan_in,
            fan_out,
        })
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let rows = shape[..shape.len() - 1].iter().product();
        let flat = tape.reshape(x, &[rows, self.fan_in])?;
        let mut y = tape.matmul(flat, p[self.weight])?;
        if let Some(b) = self.bias {
            y = tape.add_broadcast(y, p[b])?;
        }
        let mut out = shape;
        *out.last_mut().unwrap() = self.fan_out;
        tape.reshape(y, &out)
    }
}

/// Multi-head attention projections. Queries come from one token set, keys
/// and values from another (the same set for self-attention). Keys carry no
/// bias: without rotations it would shift every logit of a row equally.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub norm: LayerNormParams,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl AttentionParams {
    /// `output_std = 0` zero-initializes the output projection so the
    /// residual branch starts closed.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        output_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            norm: LayerNormParams::register(store, &format!("{prefix}.norm"), dim)?,
            query: Linear::register(store, &format!("{prefix}.q"), dim, dim, xavier_std(dim, dim), rng)?,
            key: Linear::register_without_bias(store, &format!("{prefix}.k"), dim, dim, xavier_std(dim, dim), rng)?,
            value: Linear::register(store, &format!("{prefix}.v"), dim, dim, xavier_std(dim, dim), rng)?,
            output: Linear::register(store, &format!("{prefix}.o"), dim, dim, output_std, rng)?,
        })
    }
}

/// `[R, N, d]` → `[R, H, N, d/H]`.
fn split_heads(tape: &mut Tape, x: Var, heads: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let x = tape.reshape(x, &[s[0], s[1], heads, s[2] / heads])?;
    tape.permute(x, &[0, 2, 1, 3])
}

fn merge_heads(tape: &mut Tape, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[s[0], s[2], s[1] * s[3]])
}

/// Attention weights `[R, H, N, M]` of normalized `q_in` `[R, N, d]` over
/// `kv_in` `[R, M, d]`, together with the per-head values `[R, H, M, d/H]`.
/// `rots` (`[G, N, nb, b, b]`, requires `N == M`) rotates queries and keys
/// per position.
pub fn attention_weights(
    tape: &mut Tape,
    p: &Bound,
    a: &AttentionParams,
    q_in: Var,
    kv_in: Var,
    rots: Option<Var>,
    heads: usize,
) -> Result<(Var, Var)> {
    let d = a.query.fan_out;
    let q = a.query.apply(tape, p, q_in)?;
    let k = a.key.apply(tape, p, kv_in)?;
    let v = a.value.apply(tape, p, kv_in)?;
    let mut q = split_heads(tape, q, heads)?;
    let mut k = split_heads(tape, k, heads)?;
    let v = split_heads(tape, v, heads)?;
    if let Some(r) = rots {
        q = tape.rotate_blocks(q, r)?;
        k = tape.rotate_blocks(k, r)?;
    }
    let kt = tape.transpose(k, 2, 3)?;
    let logits = tape.bmm(q, kt)?;
    let logits = tape.scale(logits, 1.0 / ((d / heads) as f64).sqrt())?;
    Ok((tape.softmax(logits, 3)?, v))
}

/// Multi-head attention output (projected, before the residual add).
pub fn attend(
    tape: &mut Tape,
    p: &Bound,
    a: &AttentionParams,
    q_in: Var,
    kv_in: Var,
    rots: Option<Var>,
    heads: usize,
) -> Result<Var> {
    let (weights, v) = attention_weights(tape, p, a, q_in, kv_in, rots, heads)?;
    let ctx = tape.bmm(weights, v)?;
    let ctx = merge_heads(tape, ctx)?;
    a.output.apply(tape, p, ctx)
}

#[derive(Clone, Debug)]
pub struct BlockParams {
    pub attention: AttentionParams,
    pub mlp_norm: LayerNormParams,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

impl BlockParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        mlp_ratio: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = mlp_ratio * dim;
        Ok(Self {
            attention: AttentionParams::register(store, &format!("{prefix}.attn"), dim, xavier_std(dim, dim), rng)?,
            mlp_norm: LayerNormParams::register(store, &format!("{prefix}.mlp.norm"), dim)?,
            mlp_in: Linear::register(
                store,
                &format!("{prefix}.mlp.in"),
                dim,
                hidden,
                xavier_std(dim, hidden),
                rng,
            )?,
            mlp_out: Linear::register(
                store,
                &format!("{prefix}.mlp.out"),
                hidden,
                dim,
                xavier_std(hidden, dim),
                rng,
            )?,
        })
    }
}

/// Swaps the two halves of the leading axis, pairing row `i` of tower A with
/// row `i` of tower B.
pub fn partner_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    let rows = tape.shape(x)[0];
    let half = rows / 2;
    let first = tape.slice(x, 0, 0, half)?;
    let second = tape.slice(x, 0, half, rows)?;
    tape.concat(&[second, first], 0)
}

/// One pre-norm block on `x` `[R, N, d]`:
/// self-attention, then (when `cross` is given) cross-attention from each
/// row to its partner row (see [`partner_rows`]), then the GELU MLP, each
/// with a residual connection.
pub fn transformer_block(
    tape: &mut Tape,
    p: &Bound,
    block: &BlockParams,
    x: Var,
    rots: Option<Var>,
    cross: Option<&AttentionParams>,
    heads: usize,
) -> Result<Var> {
    let h = block.attention.norm.apply(tape, p, x)?;
    let delta = attend(tape, p, &block.attention, h, h, rots, heads)?;
    let mut x = tape.add(x, delta)?;
    if let Some(c) = cross {
        let h = c.norm.apply(tape, p, x)?;
        let other = partner_rows(tape, h)?;
        let delta = attend(tape, p, c, h, other, rots, heads)?;
        x = tape.add(x, delta)?;
    }
    let h = block.mlp_norm.apply(tape, p, x)?;
    let h = block.mlp_in.apply(tape, p, h)?;
    let h = tape.gelu(h)?;
    let h = block.mlp_out.apply(tape, p, h)?;
    tape.add(x, h)
}
