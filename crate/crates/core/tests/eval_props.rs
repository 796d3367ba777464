use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smokewatch_core::eval::{
    average_precision, evaluate, f1_curve, match_detections, pr_curve, GroundTruth,
    GroundTruthSet, PredictionSet,
};
use smokewatch_core::{BoxXYXY, Detection};
use smokewatch_testkit::eval_oracle::{oracle_best_f1, oracle_evaluate};
use smokewatch_testkit::scenes::{random_scene, SceneParams};

fn small() -> SceneParams {
    SceneParams {
        images: 6,
        ..SceneParams::default()
    }
}

#[test]
fn evaluate_agrees_with_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..150 {
        let (preds, truths) = random_scene(&mut rng, &small());
        let got = evaluate(&preds, &truths, 0.5).unwrap();
        let want = oracle_evaluate(&preds, &truths, 0.5);
        assert_eq!((got.counts.tps, got.counts.fps), (want.tps, want.fps));
        assert!((got.map - want.map).abs() < 1e-9, "{} vs {}", got.map, want.map);
        for (c, ap) in &want.per_class_ap {
            assert!((got.ap(*c).unwrap() - ap).abs() < 1e-9);
        }
    }
}

#[test]
fn best_f1_agrees_with_threshold_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..60 {
        let (preds, truths) = random_scene(&mut rng, &small());
        let got = f1_curve(&preds, &truths, 0.5).unwrap().best;
        let (t, f) = oracle_best_f1(&preds, &truths, 0.5);
        assert_eq!((got.threshold, got.f1), (t, f));
    }
}

/// Six predictions, four truths, hand-arranged so that the best F1 sits at an
/// interior threshold.
#[test]
fn scripted_f1_fixture() {
    let b = |x: f64| BoxXYXY::new(x, 0.0, x + 10.0, 10.0).unwrap();
    let truths = GroundTruthSet::from([
        ("a".to_string(), vec![GroundTruth { bbox: b(0.0), class_id: 0 }, GroundTruth { bbox: b(20.0), class_id: 0 }]),
        ("b".to_string(), vec![GroundTruth { bbox: b(0.0), class_id: 0 }, GroundTruth { bbox: b(40.0), class_id: 0 }]),
    ]);
    let d = |x: f64, c: f64| Detection::new(b(x), 0, c).unwrap();
    let preds = PredictionSet::from([
        ("a".to_string(), vec![d(0.0, 0.95), d(21.0, 0.6), d(70.0, 0.3)]),
        ("b".to_string(), vec![d(1.0, 0.8), d(90.0, 0.5), d(100.0, 0.2)]),
    ]);
    let curve = f1_curve(&preds, &truths, 0.5).unwrap();
    let (t, f) = oracle_best_f1(&preds, &truths, 0.5);
    assert_eq!((curve.best.threshold, curve.best.f1), (t, f));
    // three TPs above 0.6, four truths: P = 1, R = 0.75
    assert_eq!(curve.best.threshold, 0.6);
    assert!((curve.best.f1 - 2.0 * 0.75 / 1.75).abs() < 1e-12);
}

#[test]
fn ap_invariant_under_monotone_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let (preds, truths) = random_scene(&mut rng, &small());
        let squashed: PredictionSet = preds
            .iter()
            .map(|(k, v)| {
                let v = v
                    .iter()
                    .map(|d| Detection { confidence: d.confidence.powi(3) * 0.5, ..*d })
                    .collect();
                (k.clone(), v)
            })
            .collect();
        let a = evaluate(&preds, &truths, 0.5).unwrap().map;
        let b = evaluate(&squashed, &truths, 0.5).unwrap().map;
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn trailing_false_positive_never_raises_ap() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let (mut preds, truths) = random_scene(&mut rng, &small());
        let before = evaluate(&preds, &truths, 0.5).unwrap();
        preds
            .entry("zz-extra".to_string())
            .or_default()
            .push(Detection::new(BoxXYXY::new(0.0, 0.0, 1.0, 1.0).unwrap(), 0, 0.0).unwrap());
        let after = evaluate(&preds, &truths, 0.5).unwrap();
        assert!(after.map <= before.map);
        assert!((0.0..=1.0).contains(&after.map));
    }
}

#[test]
fn ap_one_iff_perfect_prefix() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..100 {
        let (preds, truths) = random_scene(&mut rng, &small());
        let outcomes = match_detections(&preds, &truths, 0.5).unwrap();
        let class0: Vec<_> = outcomes.into_iter().filter(|o| o.class_id == 0).collect();
        let gts = truths.values().flatten().filter(|g| g.class_id == 0).count();
        let curve = pr_curve(&class0, gts);
        let ap = average_precision(&curve);
        let perfect_prefix = gts > 0
            && curve
                .points
                .iter()
                .position(|p| p.recall == 1.0)
                .is_some_and(|k| curve.points[..=k].iter().all(|p| p.precision == 1.0));
        assert_eq!(ap == 1.0, perfect_prefix);
    }
}
