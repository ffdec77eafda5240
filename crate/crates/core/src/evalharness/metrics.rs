use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{make_pairs, PairSample, RecoverySequence};
use crate::encoder::PosEncMode;
use crate::error::{Error, Result};
use crate::heads::{Method, PairPrediction};
use crate::trainer::{Model, PreparedClips};

/// Minimum pairs for a separation bucket to count as well supported.
pub const LOW_CONFIDENCE_PAIRS: usize = 10;

/// Every pair of each sequence with separation at least `min_sep`, in both
/// presentation orders, shuffled with `seed`.
pub fn evaluation_pairs(sequences: &[&RecoverySequence], min_sep: usize, seed: u64) -> Result<Vec<PairSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for s in sequences {
        out.extend(make_pairs(s, min_sep, s.num_clips(), None, &mut rng)?);
    }
    Ok(out)
}

/// Anything that orders presented pairs.
pub trait PairPredictor {
    fn method(&self) -> Method;
    fn predict(&self, pairs: &[PairSample]) -> Result<Vec<PairPrediction>>;
}

/// A trained model over a cache of prepared clips.
pub struct ModelPredictor<'a> {
    pub model: &'a Model,
    pub clips: &'a PreparedClips,
}

impl PairPredictor for ModelPredictor<'_> {
    fn method(&self) -> Method {
        self.model.method
    }

    fn predict(&self, pairs: &[PairSample]) -> Result<Vec<PairPrediction>> {
        self.model.predict_pairs(self.clips, pairs)
    }
}

/// Answers from the ground truth, or its negation when `inverted`.
#[derive(Clone, Copy, Debug)]
pub struct OraclePredictor {
    pub method: Method,
    pub inverted: bool,
}

impl PairPredictor for OraclePredictor {
    fn method(&self) -> Method {
        self.method
    }

    fn predict(&self, pairs: &[PairSample]) -> Result<Vec<PairPrediction>> {
        Ok(pairs
            .iter()
            .map(|p| PairPrediction {
                first_is_earlier: p.first_is_earlier() != self.inverted,
                margin: 1.0,
                method: self.method,
            })
            .collect())
    }
}

/// Always gives the same answer.
#[derive(Clone, Copy, Debug)]
pub struct ConstantPredictor {
    pub method: Method,
    pub first_is_earlier: bool,
}

impl PairPredictor for ConstantPredictor {
    fn method(&self) -> Method {
        self.method
    }

    fn predict(&self, pairs: &[PairSample]) -> Result<Vec<PairPrediction>> {
        Ok(vec![
            PairPrediction {
                first_is_earlier: self.first_is_earlier,
                margin: 0.0,
                method: self.method,
            };
            pairs.len()
        ])
    }
}

/// Negates every decision of the wrapped predictor.
pub struct Flipped<P>(pub P);

impl<P: PairPredictor> PairPredictor for Flipped<P> {
    fn method(&self) -> Method {
        self.0.method()
    }

    fn predict(&self, pairs: &[PairSample]) -> Result<Vec<PairPrediction>> {
        let mut out = self.0.predict(pairs)?;
        out.iter_mut().for_each(|p| p.first_is_earlier = !p.first_is_earlier);
        Ok(out)
    }
}

/// Confusion counts with "first presented clip is earlier" as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// 0 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// 0 when there are no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// 0 when precision and recall are both 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy at one exact clip separation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub delta: usize,
    pub n_pairs: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub low_confidence: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub posenc: Option<PosEncMode>,
    pub mgm: Option<bool>,
    pub n_pairs: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub per_delta: Vec<DeltaRow>,
}

impl EvalReport {
    /// Tags the report with the architecture it came from.
    pub fn with_tags(mut self, posenc: PosEncMode, mgm: bool) -> Self {
        self.posenc = Some(posenc);
        self.mgm = Some(mgm);
        self
    }

    /// Accuracy over pairs with separation of at least `min_delta`.
    pub fn accuracy_from(&self, min_delta: usize) -> Option<f64> {
        let (n, c) = self
            .per_delta
            .iter()
            .filter(|r| r.delta >= min_delta)
            .fold((0, 0), |(n, c), r| (n + r.n_pairs, c + r.correct));
        (n > 0).then(|| c as f64 / n as f64)
    }
}

/// Runs `predictor` on `pairs` and aggregates the decisions.
pub fn evaluate(predictor: &dyn PairPredictor, pairs: &[PairSample]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let predictions = predictor.predict(pairs)?;
    score(predictor.method(), pairs, &predictions)
}

/// Aggregates given decisions against ground truth.
pub fn score(method: Method, pairs: &[PairSample], predictions: &[PairPrediction]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    if predictions.len() != pairs.len() {
        return Err(Error::shape("score", &[pairs.len()], &[predictions.len()]));
    }
    let mut confusion = Confusion::default();
    let mut buckets: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (pair, pred) in pairs.iter().zip(predictions) {
        let truth = pair.first_is_earlier();
        match (truth, pred.first_is_earlier) {
            (true, true) => confusion.tp += 1,
            (false, true) => confusion.fp += 1,
            (false, false) => confusion.tn += 1,
            (true, false) => confusion.fn_ += 1,
        }
        let b = buckets.entry(pair.separation()).or_default();
        b.0 += 1;
        b.1 += usize::from(truth == pred.first_is_earlier);
    }
    let per_delta = buckets
        .into_iter()
        .map(|(delta, (n, c))| DeltaRow {
            delta,
            n_pairs: n,
            correct: c,
            accuracy: c as f64 / n as f64,
            low_confidence: n < LOW_CONFIDENCE_PAIRS,
        })
        .collect();
    Ok(EvalReport {
        method,
        posenc: None,
        mgm: None,
        n_pairs: pairs.len(),
        accuracy: confusion.accuracy(),
        precision: confusion.precision(),
        recall: confusion.recall(),
        f1: confusion.f1(),
        confusion,
        per_delta,
    })
}
