use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataio::{Clip, WeakLabel};
use crate::encoder::Encoder;
use crate::tensorcore::{grad_check_params, ParamStore, Tape, Tensor, FD_STEP};
use crate::testutil::{perturb, random, synth_clip, tiny_config};
use crate::Error;

fn unit(i: usize, d: usize) -> Vec<f64> {
    (0..d).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
}

#[test]
fn cosine_distance_examples() {
    let u = vec![1.0, 2.0, -0.5];
    assert!(cosine_distance(&u, &u).unwrap().abs() < 1e-15);
    assert_eq!(cosine_distance(&unit(0, 3), &unit(1, 3)).unwrap(), 1.0);
    let neg: Vec<f64> = u.iter().map(|v| -v).collect();
    assert!((cosine_distance(&u, &neg).unwrap() - 2.0).abs() < 1e-15);
    assert!(matches!(cosine_distance(&u, &[0.0; 3]), Err(Error::DegenerateInput(_))));
}

fn store_with(sob: Vec<f64>, nosob: Vec<f64>) -> (ParamStore, PrototypePair) {
    let mut store = ParamStore::new();
    let d = sob.len();
    let pair = PrototypePair {
        sob: store.add("proto.sob", Tensor::new(vec![d], sob).unwrap()).unwrap(),
        nosob: store.add("proto.nosob", Tensor::new(vec![d], nosob).unwrap()).unwrap(),
    };
    (store, pair)
}

fn loss_value(
    store: &ParamStore,
    pair: &PrototypePair,
    e: Vec<f64>,
    label: WeakLabel,
    lambda: f64,
) -> Result<f64, Error> {
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let d = e.len();
    let ev = tape.constant(Tensor::new(vec![1, d], e).unwrap());
    let l = prototype_loss(&mut tape, &p, pair, ev, &[label], lambda)?;
    Ok(tape.item(l))
}

#[test]
fn prototype_loss_examples() {
    let (store, pair) = store_with(unit(0, 4), unit(1, 4));
    assert!(
        loss_value(&store, &pair, unit(0, 4), WeakLabel::Sob, 0.1)
            .unwrap()
            .abs()
            < 1e-15
    );
    assert!((loss_value(&store, &pair, unit(2, 4), WeakLabel::NoSob, 0.0).unwrap() - 1.0).abs() < 1e-15);
    let (same, pair2) = store_with(unit(0, 4), unit(0, 4));
    assert!((loss_value(&same, &pair2, unit(0, 4), WeakLabel::Sob, 0.1).unwrap() - 0.1).abs() < 1e-15);
    assert!(matches!(
        loss_value(&store, &pair, unit(0, 4), WeakLabel::Excluded, 0.1),
        Err(Error::Contract(_))
    ));
}

#[test]
fn sob_score_examples() {
    let (sob, nosob) = (unit(0, 3), unit(1, 3));
    assert!((sob_score(&sob, &sob, &nosob).unwrap() - 1.0).abs() < 1e-15);
    assert!((sob_score(&nosob, &sob, &nosob).unwrap() + 1.0).abs() < 1e-15);
    assert_eq!(sob_score(&[1.0, 1.0, 0.0], &sob, &nosob).unwrap(), 0.0);
}

#[test]
fn pair_ordering_examples() {
    let p = order_from_scores(0.4, -0.2);
    assert!(p.first_is_earlier);
    assert!((p.margin - 0.6).abs() < 1e-15);
    assert!(order_from_scores(0.3, 0.3).first_is_earlier);
    assert!(!order_from_scores(-0.2, 0.4).first_is_earlier);
    assert!(order_pair_logit(0.0, Method::TtCls).first_is_earlier);
}

#[test]
fn prototypes_start_orthonormal_and_renormalize() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pair = PrototypePair::register(&mut store, 16, &mut rng).unwrap();
    let (a, b) = pair.values(&store);
    assert!(cosine_similarity(a, b).unwrap().abs() < 1e-12);
    assert!((a.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    store.get_mut(pair.sob).data_mut().iter_mut().for_each(|v| *v *= 3.0);
    pair.renormalize(&mut store).unwrap();
    let (a, _) = pair.values(&store);
    assert!((a.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    store.get_mut(pair.nosob).data_mut().fill(0.0);
    assert!(pair.renormalize(&mut store).is_err());
}

#[test]
fn method_names() {
    for m in Method::ALL {
        assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
    }
    assert!("svm".parse::<Method>().is_err());
}

#[test]
fn prototype_loss_gradients() {
    for seed in 0..3 {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = PrototypePair::register(&mut store, 8, &mut rng).unwrap();
        perturb(&mut store, 0.3, seed);
        let e = random(&[4, 8], 1.0, seed + 5);
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
        )
        .unwrap();
        assert!(report.iter().all(|r| r.max_rel_error < 1e-4), "{report:?}");
    }
}

struct Towers {
    encoder: Encoder,
    full: TwoTowerFull,
    cls: TwoTowerCls,
    store: ParamStore,
}

fn towers(seed: u64) -> Towers {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = Encoder::register(&tiny_config(), &mut store, &mut rng).unwrap();
    let full = TwoTowerFull::register(&mut store, &encoder, &mut rng).unwrap();
    let cls = TwoTowerCls::register(&mut store, &encoder, &mut rng).unwrap();
    Towers {
        encoder,
        full,
        cls,
        store,
    }
}

fn logits(t: &Towers, method: Method, a: &[&Clip], b: &[&Clip]) -> Vec<f64> {
    let mut tape = Tape::new();
    let p = t.store.bind_frozen(&mut tape);
    let z = match method {
        Method::TtFull => t.full.logits(&mut tape, &p, &t.encoder, a, b),
        _ => t.cls.logits(&mut tape, &p, &t.encoder, a, b),
    }
    .unwrap();
    tape.value(z).data().to_vec()
}

#[test]
fn fresh_two_tower_logits_are_zero() {
    let t = towers(1);
    let cfg = tiny_config();
    let (a, b) = (synth_clip(&cfg, 1, 0), synth_clip(&cfg, 1, 2));
    for m in [Method::TtFull, Method::TtCls] {
        assert_eq!(logits(&t, m, &[&a], &[&b]), vec![0.0]);
    }
}

#[test]
fn two_tower_antisymmetry_and_identical_inputs() {
    let mut t = towers(2);
    perturb(&mut t.store, 0.1, 2);
    let cfg = tiny_config();
    let (a, b, c) = (synth_clip(&cfg, 2, 0), synth_clip(&cfg, 2, 1), synth_clip(&cfg, 3, 0));
    for m in [Method::TtFull, Method::TtCls] {
        let ab = logits(&t, m, &[&a, &c], &[&b, &a]);
        let ba = logits(&t, m, &[&b, &a], &[&a, &c]);
        for (x, y) in ab.iter().zip(&ba) {
            assert!(x.abs() > 1e-9, "{m}: logit should be informative");
            assert!((x + y).abs() < 1e-9, "{m}: {x} vs {y}");
        }
        let same = logits(&t, m, &[&a], &[&a]);
        assert!(same[0].abs() < 1e-12, "{m}: {same:?}");
    }
}

#[test]
fn two_tower_gradients() {
    let cfg = tiny_config();
    for seed in 0..3 {
        let mut t = towers(seed + 10);
        perturb(&mut t.store, 0.05, seed);
        let a = t.encoder.prepare(&synth_clip(&cfg, seed, 0)).unwrap();
        let b = t.encoder.prepare(&synth_clip(&cfg, seed, 2)).unwrap();
        for m in [Method::TtFull, Method::TtCls] {
            let report = grad_check_params(
                &t.store,
                |tape, p| {
                    let z = match m {
                        Method::TtFull => t.full.logits(tape, p, &t.encoder, &[&a, &b], &[&b, &a])?,
                        _ => t.cls.logits(tape, p, &t.encoder, &[&a, &b], &[&b, &a])?,
                    };
                    pair_bce(tape, z, &[true, false])
                },
                FD_STEP,
                2,
                seed,
            )
            .unwrap();
            let bad: Vec<_> = report.iter().filter(|r| r.max_rel_error >= 1e-4).collect();
            assert!(bad.is_empty(), "{m} seed {seed}: {bad:?}");
        }
    }
}

#[test]
fn bce_at_zero_logit_is_ln2() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::zeros(vec![4]));
    let l = pair_bce(&mut tape, z, &[true, false, true, false]).unwrap();
    assert!((tape.item(l) - std::f64::consts::LN_2).abs() < 1e-15);
}

proptest! {
    #[test]
    fn cosine_bounds_and_scale_invariance(
        u in proptest::collection::vec(-5.0f64..5.0, 6),
        v in proptest::collection::vec(-5.0f64..5.0, 6),
        alpha in 0.001f64..1000.0,
    ) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let d = cosine_distance(&u, &v).unwrap();
        prop_assert!((0.0..=2.0).contains(&d));
        let scaled: Vec<f64> = u.iter().map(|x| x * alpha).collect();
        prop_assert!((cosine_distance(&scaled, &v).unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn score_antisymmetric_in_prototypes_and_ordering_consistent(
        e1 in proptest::collection::vec(-1.0f64..1.0, 5),
        e2 in proptest::collection::vec(-1.0f64..1.0, 5),
        s in proptest::collection::vec(-1.0f64..1.0, 5),
        n in proptest::collection::vec(-1.0f64..1.0, 5),
    ) {
        for v in [&e1, &e2, &s, &n] {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        }
        prop_assert_eq!(sob_score(&e1, &s, &n).unwrap(), -sob_score(&e1, &n, &s).unwrap());
        let ab = order_pair_embedding(&e1, &e2, &s, &n).unwrap();
        let ba = order_pair_embedding(&e2, &e1, &s, &n).unwrap();
        if ab.margin > 0.0 {
            prop_assert_ne!(ab.first_is_earlier, ba.first_is_earlier);
        }
    }
}
