use proptest::prelude::*;

use super::*;
use crate::dataio::PairSample;
use crate::encoder::PosEncMode;
use crate::error::Error;
use crate::heads::{Method, PairPrediction};

/// Every ordered pair of an `m`-clip sequence: balanced by construction.
fn balanced(m: usize) -> Vec<PairSample> {
    let mut out = Vec::new();
    for i in 0..m {
        for j in 0..m {
            if i != j {
                out.push(PairSample {
                    video_id: "v".into(),
                    first: i,
                    second: j,
                });
            }
        }
    }
    out
}

fn oracle(inverted: bool) -> OraclePredictor {
    OraclePredictor {
        method: Method::Embedding,
        inverted,
    }
}

fn check_identities(r: &EvalReport) {
    let c = r.confusion;
    let n = c.total() as f64;
    assert_eq!(c.total(), r.n_pairs);
    assert!((r.accuracy - (c.tp + c.tn) as f64 / n).abs() < 1e-12);
    let p = if c.tp + c.fp == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    };
    let rec = if c.tp + c.fn_ == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    };
    let f1 = if p + rec == 0.0 { 0.0 } else { 2.0 * p * rec / (p + rec) };
    assert!((r.precision - p).abs() < 1e-12);
    assert!((r.recall - rec).abs() < 1e-12);
    assert!((r.f1 - f1).abs() < 1e-12);
    assert_eq!(r.per_delta.iter().map(|d| d.n_pairs).sum::<usize>(), r.n_pairs);
}

#[test]
fn oracle_scores_perfectly() {
    let r = evaluate(&oracle(false), &balanced(6)).unwrap();
    assert_eq!((r.accuracy, r.f1), (1.0, 1.0));
    check_identities(&r);
}

#[test]
fn inverted_oracle_scores_zero() {
    let r = evaluate(&oracle(true), &balanced(6)).unwrap();
    assert_eq!((r.accuracy, r.f1), (0.0, 0.0));
    check_identities(&r);
}

#[test]
fn constant_predictor_closed_form() {
    let p = ConstantPredictor {
        method: Method::TtFull,
        first_is_earlier: true,
    };
    let r = evaluate(&p, &balanced(12)).unwrap();
    assert_eq!(r.accuracy, 0.5);
    assert_eq!(r.recall, 1.0);
    assert_eq!(r.precision, 0.5);
    assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
    check_identities(&r);
}

#[test]
fn empty_pairs_rejected() {
    assert!(matches!(evaluate(&oracle(false), &[]), Err(Error::EmptyPairs)));
}

#[test]
fn per_delta_buckets_are_exact() {
    let r = evaluate(&oracle(false), &balanced(5)).unwrap();
    let deltas: Vec<_> = r.per_delta.iter().map(|d| (d.delta, d.n_pairs)).collect();
    assert_eq!(deltas, vec![(1, 8), (2, 6), (3, 4), (4, 2)]);
    assert!(r.per_delta.iter().all(|d| d.low_confidence));
    assert_eq!(r.accuracy_from(3), Some(1.0));
    assert_eq!(r.accuracy_from(9), None);
}

#[test]
fn oracle_curve_is_flat_at_one() {
    let c = separation_curve(&oracle(false), &balanced(12)).unwrap();
    assert_eq!(c.points.len(), 11);
    assert!(c.points.iter().all(|p| p.accuracy == 1.0));
    assert!(!c.points[0].low_confidence);
    assert!(c.points[10].low_confidence);
    assert!(separation_curve(&oracle(false), &[]).unwrap().points.is_empty());
}

#[test]
fn spearman_reference_values() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.1, 0.5, 0.9]), 1.0);
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
    // ranks x = 1,2,3,4; y = 1.5,1.5,3,4 → r = 4.5 / sqrt(5 · 4.5)
    let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[0.2, 0.2, 0.5, 0.7]);
    assert!((r - 4.5 / (5.0f64 * 4.5).sqrt()).abs() < 1e-12);
    assert!(spearman(&[1.0, 2.0], &[0.5, 0.5]).is_nan());
}

#[test]
fn results_csv_has_one_row_per_method() {
    let a = evaluate(&oracle(false), &balanced(4))
        .unwrap()
        .with_tags(PosEncMode::Liere, true);
    let b = score(Method::TtCls, &balanced(2), &[pred(true), pred(true)]).unwrap();
    let csv = results_csv(&[a, b]).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "method,posenc,mgm,accuracy,f1");
    assert_eq!(lines[1], "embedding,liere,on,1,1");
    assert!(lines[2].starts_with("tt_cls,-,-,0.5,"));
}

fn pred(first_is_earlier: bool) -> PairPrediction {
    PairPrediction {
        first_is_earlier,
        margin: 0.0,
        method: Method::TtCls,
    }
}

#[test]
fn curve_files_have_one_row_per_delta_and_rerender_identically() {
    let report = evaluate(&oracle(false), &balanced(11)).unwrap();
    let curve = SeparationCurve::from_report(&report);
    assert_eq!(curve_csv(&curve).lines().count(), 11);
    let svg = curve_svg(&curve);
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert!(svg.ends_with("</svg>\n"));

    let meta = RunMeta::new(7, serde_json::json!({"k": 1}));
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        render_reports(std::slice::from_ref(&report), Some(&curve), &meta, d.path()).unwrap();
    }
    for name in [
        RESULTS_FILE,
        CURVE_CSV_FILE,
        CURVE_SVG_FILE,
        RUN_META_FILE,
        "report_embedding.json",
    ] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let meta_back: RunMeta =
        serde_json::from_slice(&std::fs::read(dirs[0].path().join(RUN_META_FILE)).unwrap()).unwrap();
    assert_eq!(meta_back.version, format!("v{}", env!("CARGO_PKG_VERSION")));
    assert_eq!(meta_back.seed, 7);
}

#[test]
fn render_into_unwritable_path_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let r = evaluate(&oracle(false), &balanced(3)).unwrap();
    let err = render_reports(&[r], None, &RunMeta::new(0, serde_json::Value::Null), &blocker).unwrap_err();
    assert!(err.to_string().contains("file"), "{err}");
}

proptest! {
    #[test]
    fn identities_hold_for_any_predictions(m in 2usize..9, bits in proptest::collection::vec(any::<bool>(), 72)) {
        let pairs = balanced(m);
        let preds: Vec<_> = pairs.iter().zip(bits.iter().cycle()).map(|(_, &b)| pred(b)).collect();
        let r = score(Method::TtCls, &pairs, &preds).unwrap();
        check_identities(&r);
    }

    #[test]
    fn flipping_predictions_maps_accuracy_to_complement(m in 2usize..9, bits in proptest::collection::vec(any::<bool>(), 72)) {
        struct Fixed(Vec<bool>);
        impl PairPredictor for Fixed {
            fn method(&self) -> Method { Method::TtFull }
            fn predict(&self, pairs: &[PairSample]) -> crate::error::Result<Vec<PairPrediction>> {
                Ok(self.0.iter().take(pairs.len()).map(|&b| pred(b)).collect())
            }
        }
        let pairs = balanced(m);
        let fixed = Fixed(bits.iter().cycle().take(pairs.len()).copied().collect());
        let a = evaluate(&fixed, &pairs).unwrap();
        let b = evaluate(&Flipped(fixed), &pairs).unwrap();
        let correct = |r: &EvalReport| r.confusion.tp + r.confusion.tn;
        prop_assert_eq!(correct(&a), pairs.len() - correct(&b));
        prop_assert!((a.accuracy - (1.0 - b.accuracy)).abs() <= f64::EPSILON);
    }
}

#[test]
fn evaluation_pairs_cover_every_ordered_pair() {
    let seqs = crate::dataio::synth_dataset(
        &crate::dataio::SynthParams {
            num_clips: 5,
            frames: 1,
            height: 8,
            width: 8,
            ..crate::dataio::SynthParams::default()
        },
        2,
    )
    .unwrap();
    let refs: Vec<_> = seqs.iter().collect();
    let pairs = evaluation_pairs(&refs, 1, 0).unwrap();
    assert_eq!(pairs.len(), 2 * 5 * 4);
    assert_eq!(pairs.iter().filter(|p| p.first_is_earlier()).count(), 20);
    assert_eq!(pairs, evaluation_pairs(&refs, 1, 0).unwrap());
    assert_eq!(evaluation_pairs(&refs, 4, 0).unwrap().len(), 2 * 2);
}

#[test]
fn repeated_methods_get_numbered_report_files() {
    let r = evaluate(&oracle(false), &balanced(3)).unwrap();
    let t = score(Method::TtCls, &balanced(2), &[pred(true), pred(false)]).unwrap();
    let reports = [r.clone(), t, r];
    let names: Vec<_> = (0..3).map(|i| report_file_name(&reports, i)).collect();
    assert_eq!(
        names,
        [
            "report_embedding_1.json",
            "report_tt_cls.json",
            "report_embedding_2.json"
        ]
    );
}
