use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::WeakLabel;
use crate::error::{Error, Result};
use crate::tensorcore::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

pub const DEFAULT_REPULSION: f64 = 0.1;

fn norm(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine", &[u.len()], &[v.len()]));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateInput("cosine of a zero vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// `1 − cos(u, v)`, in `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(u, v)?)
}

/// Row-wise cosine similarity of `e` `[B, d]` with the vector `c` `[d]`, giving `[B]`.
pub fn cosine_similarity_rows(tape: &mut Tape, e: Var, c: Var) -> Result<Var> {
    let (se, sc) = (tape.shape(e).to_vec(), tape.shape(c).to_vec());
    if se.len() != 2 || sc != [se[1]] {
        return Err(Error::shape("cosine_similarity_rows", &se, &sc));
    }
    for (what, v) in [("embedding", e), ("prototype", c)] {
        let data = tape.value(v).data();
        let width = *tape.shape(v).last().unwrap();
        if data.chunks(width).any(|row| norm(row) == 0.0) {
            return Err(Error::DegenerateInput(format!("zero {what} vector")));
        }
    }
    let prod = tape.mul_broadcast(e, c)?;
    let dot = tape.sum_axis(prod, 1)?;
    let sq = tape.mul(e, e)?;
    let ne = tape.sum_axis(sq, 1)?;
    let ne = tape.sqrt(ne)?;
    let cc = tape.mul(c, c)?;
    let nc = tape.sum(cc)?;
    let nc = tape.sqrt(nc)?;
    let denom = tape.mul_broadcast(ne, nc)?;
    tape.div(dot, denom)
}

/// Learned SOB and NoSOB class anchors, kept at unit length.
#[derive(Clone, Debug)]
pub struct PrototypePair {
    pub sob: ParamId,
    pub nosob: ParamId,
}

impl PrototypePair {
    /// Two random unit vectors, the second orthogonalized against the first.
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, dim: usize, rng: &mut R) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config("prototypes need at least two dimensions".into()));
        }
        let mut draw = || -> Vec<f64> { (0..dim).map(|_| StandardNormal.sample(rng)).collect() };
        let mut a = draw();
        let mut b = draw();
        let na = norm(&a);
        a.iter_mut().for_each(|v| *v /= na);
        let proj: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        b.iter_mut().zip(&a).for_each(|(y, x)| *y -= proj * x);
        let nb = norm(&b);
        b.iter_mut().for_each(|v| *v /= nb);
        Ok(Self {
            sob: store.add("proto.sob", Tensor::new(vec![dim], a)?)?,
            nosob: store.add("proto.nosob", Tensor::new(vec![dim], b)?)?,
        })
    }

    /// Rescales both prototypes to unit norm (after each optimizer step).
    pub fn renormalize(&self, store: &mut ParamStore) -> Result<()> {
        for id in [self.sob, self.nosob] {
            let t = store.get_mut(id);
            let n = norm(t.data());
            if n == 0.0 {
                return Err(Error::DegenerateInput(format!(
                    "prototype {} collapsed to zero",
                    store.name(id)
                )));
            }
            t.data_mut().iter_mut().for_each(|v| *v /= n);
        }
        Ok(())
    }

    pub fn values<'a>(&self, store: &'a ParamStore) -> (&'a [f64], &'a [f64]) {
        (store.get(self.sob).data(), store.get(self.nosob).data())
    }
}

/// Mean over the batch of `cosdist(e_i, c_label_i)`, plus
/// `λ·max(0, cos(c_sob, c_nosob))`. `λ = 0` is the pull-only objective.
pub fn prototype_loss(
    tape: &mut Tape,
    p: &Bound,
    protos: &PrototypePair,
    embeddings: Var,
    labels: &[WeakLabel],
    repulsion: f64,
) -> Result<Var> {
    let rows = tape.shape(embeddings)[0];
    if labels.len() != rows {
        return Err(Error::shape("prototype_loss", &[rows], &[labels.len()]));
    }
    let mut select = Vec::with_capacity(rows);
    for l in labels {
        select.push(match l {
            WeakLabel::Sob => 1.0,
            WeakLabel::NoSob => 0.0,
            WeakLabel::Excluded => return Err(Error::contract("Excluded clips carry no training label")),
        });
    }
    let cos_sob = cosine_similarity_rows(tape, embeddings, p[protos.sob])?;
    let cos_nosob = cosine_similarity_rows(tape, embeddings, p[protos.nosob])?;
    let m = tape.constant(Tensor::new(vec![rows], select.clone())?);
    let not_m = tape.constant(Tensor::new(vec![rows], select.iter().map(|s| 1.0 - s).collect())?);
    let a = tape.mul(cos_sob, m)?;
    let b = tape.mul(cos_nosob, not_m)?;
    let cos_label = tape.add(a, b)?;
    let mean_cos = tape.mean(cos_label)?;
    let mut loss = tape.neg(mean_cos)?;
    loss = tape.add_scalar(loss, 1.0)?;
    if repulsion != 0.0 {
        let sob = tape.reshape(p[protos.sob], &[1, tape.shape(p[protos.sob])[0]])?;
        let pc = cosine_similarity_rows(tape, sob, p[protos.nosob])?;
        let pc = tape.relu(pc)?;
        let pc = tape.sum(pc)?;
        let pc = tape.scale(pc, repulsion)?;
        loss = tape.add(loss, pc)?;
    }
    Ok(loss)
}

/// `cosdist(e, c_nosob) − cosdist(e, c_sob)`; higher means more SOB-like.
pub fn sob_score(embedding: &[f64], sob: &[f64], nosob: &[f64]) -> Result<f64> {
    Ok(cosine_distance(embedding, nosob)? - cosine_distance(embedding, sob)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Embedding,
    TtFull,
    TtCls,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Embedding, Method::TtFull, Method::TtCls];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Embedding => "embedding",
            Method::TtFull => "tt_full",
            Method::TtCls => "tt_cls",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    /// Accepts `tt-full` as well as `tt_full`.
    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .ok_or_else(|| Error::Config(format!("unknown method {s}")))
    }
}

/// Order decision for one presented pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairPrediction {
    pub first_is_earlier: bool,
    pub margin: f64,
    pub method: Method,
}

/// The clip with the higher SOB score is predicted earlier; exact ties go to
/// the first presented clip.
pub fn order_pair_embedding(emb_a: &[f64], emb_b: &[f64], sob: &[f64], nosob: &[f64]) -> Result<PairPrediction> {
    Ok(order_from_scores(
        sob_score(emb_a, sob, nosob)?,
        sob_score(emb_b, sob, nosob)?,
    ))
}

/// [`order_pair_embedding`] from precomputed scores.
pub fn order_from_scores(score_a: f64, score_b: f64) -> PairPrediction {
    PairPrediction {
        first_is_earlier: score_a >= score_b,
        margin: (score_a - score_b).abs(),
        method: Method::Embedding,
    }
}

/// Two-tower decision from the antisymmetric logit; `logit ≥ 0` means the
/// first clip is earlier.
pub fn order_pair_logit(logit: f64, method: Method) -> PairPrediction {
    PairPrediction {
        first_is_earlier: logit >= 0.0,
        margin: logit.abs(),
        method,
    }
}
