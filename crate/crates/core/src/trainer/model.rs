use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataio::{Clip, PairSample, RecoverySequence};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::heads::{
    order_from_scores, order_pair_logit, sob_score, Method, PairPrediction, PrototypePair, TwoTowerCls, TwoTowerFull,
};
use crate::tensorcore::{read_checkpoint, write_checkpoint, Bound, ParamStore, Tape, Var};

/// Clips per frozen forward pass during inference.
pub const INFERENCE_CHUNK: usize = 16;

/// Method-specific parameters on top of the shared encoder.
#[derive(Clone, Debug)]
pub enum Head {
    Prototype(PrototypePair),
    TtFull(TwoTowerFull),
    TtCls(TwoTowerCls),
}

/// Encoder, head and the parameter store that backs both.
#[derive(Clone, Debug)]
pub struct Model {
    pub method: Method,
    pub encoder: Encoder,
    pub head: Head,
    pub store: ParamStore,
}

impl Model {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(method: Method, config: &EncoderConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::register(config, &mut store, &mut rng)?;
        let head = match method {
            Method::Embedding => Head::Prototype(PrototypePair::register(&mut store, encoder.embed_dim(), &mut rng)?),
            Method::TtFull => Head::TtFull(TwoTowerFull::register(&mut store, &encoder, &mut rng)?),
            Method::TtCls => Head::TtCls(TwoTowerCls::register(&mut store, &encoder, &mut rng)?),
        };
        Ok(Self {
            method,
            encoder,
            head,
            store,
        })
    }

    /// Rebuilds the architecture from `config` and loads weights from a checkpoint.
    pub fn load(method: Method, config: &EncoderConfig, path: &Path) -> Result<Self> {
        let mut model = Self::new(method, config)?;
        model.store.load(read_checkpoint(path)?)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(&self.store, path)
    }

    pub fn prototypes(&self) -> Option<(&[f64], &[f64])> {
        match &self.head {
            Head::Prototype(p) => Some(p.values(&self.store)),
            _ => None,
        }
    }

    /// Pair logits `[B]` on `tape` for the two-tower heads.
    pub fn pair_logits(&self, tape: &mut Tape, p: &Bound, a: &[&Clip], b: &[&Clip]) -> Result<Var> {
        match &self.head {
            Head::TtFull(h) => h.logits(tape, p, &self.encoder, a, b),
            Head::TtCls(h) => h.logits(tape, p, &self.encoder, a, b),
            Head::Prototype(_) => Err(Error::contract("the embedding method has no pair logit")),
        }
    }

    /// SOB scores of prepared clips (embedding method).
    pub fn scores(&self, clips: &[&Clip]) -> Result<Vec<f64>> {
        let (sob, nosob) = self
            .prototypes()
            .ok_or_else(|| Error::contract("two-tower methods do not score single clips"))?;
        let embeddings = self.encoder.embed_values(&self.store, clips, INFERENCE_CHUNK)?;
        embeddings.iter().map(|e| sob_score(e, sob, nosob)).collect()
    }

    /// Frozen pair logits of prepared clips (two-tower methods).
    pub fn logit_values(&self, a: &[&Clip], b: &[&Clip]) -> Result<Vec<f64>> {
        if a.len() != b.len() {
            return Err(Error::contract(format!(
                "{} first clips, {} second clips",
                a.len(),
                b.len()
            )));
        }
        let mut out = Vec::with_capacity(a.len());
        for (ca, cb) in a.chunks(INFERENCE_CHUNK).zip(b.chunks(INFERENCE_CHUNK)) {
            let mut tape = Tape::new();
            let p = self.store.bind_frozen(&mut tape);
            let z = self.pair_logits(&mut tape, &p, ca, cb)?;
            out.extend_from_slice(tape.value(z).data());
        }
        Ok(out)
    }

    /// Order decisions for `pairs`, looking clips up in `clips`. Read-only.
    pub fn predict_pairs(&self, clips: &PreparedClips, pairs: &[PairSample]) -> Result<Vec<PairPrediction>> {
        if self.method == Method::Embedding {
            let mut keys: Vec<(&str, usize)> = pairs
                .iter()
                .flat_map(|p| [(p.video_id.as_str(), p.first), (p.video_id.as_str(), p.second)])
                .collect();
            keys.sort_unstable();
            keys.dedup();
            let refs = keys.iter().map(|&(v, i)| clips.get(v, i)).collect::<Result<Vec<_>>>()?;
            let scores = self.scores(&refs)?;
            let lookup: HashMap<(&str, usize), f64> = keys.into_iter().zip(scores).collect();
            Ok(pairs
                .iter()
                .map(|p| {
                    order_from_scores(
                        lookup[&(p.video_id.as_str(), p.first)],
                        lookup[&(p.video_id.as_str(), p.second)],
                    )
                })
                .collect())
        } else {
            let (a, b) = clips.pair_refs(pairs)?;
            let logits = self.logit_values(&a, &b)?;
            Ok(logits.into_iter().map(|z| order_pair_logit(z, self.method)).collect())
        }
    }
}

/// Clips after [`Encoder::prepare`], keyed by `(video_id, clip_index)`.
#[derive(Clone, Debug, Default)]
pub struct PreparedClips {
    clips: HashMap<(String, usize), Clip>,
}

impl PreparedClips {
    /// Prepares every clip of `sequences` in parallel.
    pub fn build(encoder: &Encoder, sequences: &[&RecoverySequence]) -> Result<Self> {
        let all: Vec<&Clip> = sequences.iter().flat_map(|s| &s.clips).collect();
        let prepared = all.par_iter().map(|c| encoder.prepare(c)).collect::<Result<Vec<_>>>()?;
        let clips = all
            .iter()
            .zip(prepared)
            .map(|(c, p)| ((c.video_id.clone(), c.clip_index), p))
            .collect();
        Ok(Self { clips })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn get(&self, video_id: &str, clip_index: usize) -> Result<&Clip> {
        self.clips
            .get(&(video_id.to_string(), clip_index))
            .ok_or_else(|| Error::Dataset(format!("no clip {clip_index} of {video_id}")))
    }

    /// First and second clips of each pair, in pair order.
    pub fn pair_refs(&self, pairs: &[PairSample]) -> Result<(Vec<&Clip>, Vec<&Clip>)> {
        let mut a = Vec::with_capacity(pairs.len());
        let mut b = Vec::with_capacity(pairs.len());
        for p in pairs {
            a.push(self.get(&p.video_id, p.first)?);
            b.push(self.get(&p.video_id, p.second)?);
        }
        Ok((a, b))
    }
}
