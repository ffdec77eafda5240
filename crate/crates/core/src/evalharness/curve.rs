use serde::{Deserialize, Serialize};

use crate::dataio::PairSample;
use crate::error::Result;

use super::metrics::{evaluate, EvalReport, PairPredictor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub delta: usize,
    pub n_pairs: usize,
    pub accuracy: f64,
    pub low_confidence: bool,
}

/// Accuracy by exact clip separation, in increasing order of separation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeparationCurve {
    pub points: Vec<CurvePoint>,
}

impl SeparationCurve {
    pub fn from_report(report: &EvalReport) -> Self {
        Self {
            points: report
                .per_delta
                .iter()
                .map(|r| CurvePoint {
                    delta: r.delta,
                    n_pairs: r.n_pairs,
                    accuracy: r.accuracy,
                    low_confidence: r.low_confidence,
                })
                .collect(),
        }
    }

    /// Spearman rank correlation between separation and accuracy.
    pub fn spearman(&self) -> f64 {
        let x: Vec<f64> = self.points.iter().map(|p| p.delta as f64).collect();
        let y: Vec<f64> = self.points.iter().map(|p| p.accuracy).collect();
        spearman(&x, &y)
    }
}

/// Evaluates `predictor` and buckets accuracy by separation.
pub fn separation_curve(predictor: &dyn PairPredictor, pairs: &[PairSample]) -> Result<SeparationCurve> {
    if pairs.is_empty() {
        return Ok(SeparationCurve::default());
    }
    Ok(SeparationCurve::from_report(&evaluate(predictor, pairs)?))
}

/// Ranks from 1, with tied values sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = mean;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation of tie-averaged ranks. `NaN` when either side is
/// constant or there are fewer than two points.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman length mismatch");
    if x.len() < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}
