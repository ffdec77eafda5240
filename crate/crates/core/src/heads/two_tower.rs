use rand::Rng;

use crate::dataio::Clip;
use crate::encoder::{attend, partner_rows, AttentionParams, CrossParams, Encoder};
use crate::error::{Error, Result};
use crate::tensorcore::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Antisymmetric readout `w·(u_a − u_b)`, giving `[B]` logits.
fn readout(tape: &mut Tape, p: &Bound, w: ParamId, ua: Var, ub: Var) -> Result<Var> {
    let diff = tape.sub(ua, ub)?;
    let d = tape.shape(diff)[1];
    let w = tape.reshape(p[w], &[d, 1])?;
    let z = tape.matmul(diff, w)?;
    let rows = tape.shape(z)[0];
    tape.reshape(z, &[rows])
}

fn register_readout(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<ParamId> {
    store.add(format!("{prefix}.readout"), Tensor::zeros(vec![dim]))
}

/// Weight-shared towers that cross-attend to each other in every block.
#[derive(Clone, Debug)]
pub struct TwoTowerFull {
    pub cross: CrossParams,
    pub readout: ParamId,
}

impl TwoTowerFull {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, encoder: &Encoder, rng: &mut R) -> Result<Self> {
        Ok(Self {
            cross: CrossParams::register(store, "tt_full.cross", &encoder.config, rng)?,
            readout: register_readout(store, "tt_full", encoder.embed_dim())?,
        })
    }

    /// Logits `[B]`; positive means the first clip is earlier.
    pub fn logits(&self, tape: &mut Tape, p: &Bound, encoder: &Encoder, a: &[&Clip], b: &[&Clip]) -> Result<Var> {
        let (ua, ub) = encoder.embed_towers(tape, p, a, b, &self.cross)?;
        readout(tape, p, self.readout, ua, ub)
    }
}

/// Independent towers whose final CLS vectors exchange one bidirectional
/// cross-attention round. Each CLS attends to a single key, the partner CLS.
#[derive(Clone, Debug)]
pub struct TwoTowerCls {
    pub cross: AttentionParams,
    pub readout: ParamId,
}

impl TwoTowerCls {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, encoder: &Encoder, rng: &mut R) -> Result<Self> {
        let d = encoder.embed_dim();
        Ok(Self {
            cross: AttentionParams::register(store, "tt_cls.cross", d, 0.0, rng)?,
            readout: register_readout(store, "tt_cls", d)?,
        })
    }

    pub fn logits(&self, tape: &mut Tape, p: &Bound, encoder: &Encoder, a: &[&Clip], b: &[&Clip]) -> Result<Var> {
        if a.len() != b.len() {
            return Err(Error::contract(format!(
                "{} clips in tower A, {} in tower B",
                a.len(),
                b.len()
            )));
        }
        let both: Vec<&Clip> = a.iter().chain(b).copied().collect();
        let cls = encoder.embed(tape, p, &both)?;
        let (rows, d) = (both.len(), encoder.embed_dim());
        let x = tape.reshape(cls, &[rows, 1, d])?;
        let h = self.cross.norm.apply(tape, p, x)?;
        let other = partner_rows(tape, h)?;
        let delta = attend(tape, p, &self.cross, h, other, None, encoder.config.heads)?;
        let u = tape.add(x, delta)?;
        let u = tape.reshape(u, &[rows, d])?;
        let n = a.len();
        let ua = tape.slice(u, 0, 0, n)?;
        let ub = tape.slice(u, 0, n, 2 * n)?;
        readout(tape, p, self.readout, ua, ub)
    }
}

/// Mean binary cross-entropy of logits `[B]` against "first is earlier" targets.
pub fn pair_bce(tape: &mut Tape, logits: Var, first_is_earlier: &[bool]) -> Result<Var> {
    let rows = tape.shape(logits).first().copied().unwrap_or(0);
    if rows != first_is_earlier.len() {
        return Err(Error::shape("pair_bce", &[rows], &[first_is_earlier.len()]));
    }
    // -log σ(z) = softplus(−z); −log(1 − σ(z)) = softplus(z).
    let signs = first_is_earlier.iter().map(|&y| if y { -1.0 } else { 1.0 }).collect();
    let s = tape.constant(Tensor::new(vec![rows], signs)?);
    let z = tape.mul(logits, s)?;
    let l = tape.softplus(z)?;
    tape.mean(l)
}
