//! Detection-quality metrics at a fixed IoU threshold: greedy matching, the
//! precision/recall curve, all-point interpolated AP, and the F1-vs-confidence
//! sweep.

mod report;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::geometry::{iou, BoxXYXY, Detection};

pub use report::{
    ground_truth_from_manifest, read_predictions, render_summary, render_svg_f1, render_svg_pr,
    write_f1_csv, write_pr_csv, write_predictions, write_report, write_summary_csv,
};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "box")]
    pub bbox: BoxXYXY,
    pub class_id: u32,
}

pub type GroundTruthSet = BTreeMap<String, Vec<GroundTruth>>;
pub type PredictionSet = BTreeMap<String, Vec<Detection>>;

/// Result of matching one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub image_id: String,
    /// Index into the image's prediction list.
    pub detection: usize,
    pub class_id: u32,
    pub confidence: f64,
    pub is_tp: bool,
    /// Index into the image's ground-truth list.
    pub matched_truth: Option<usize>,
}

fn check_iou_thresh(t: f64) -> Result<(), EvalError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(EvalError::BadIouThreshold(t))
    }
}

/// Greedy matching, per image and per class.
///
/// Predictions are visited by descending confidence (ties by smaller x1); each takes
/// the still-unmatched truth of its class with the highest IoU if that IoU reaches
/// `iou_thresh`. Outcomes are returned sorted by descending confidence, ties by
/// image id then visiting order.
pub fn match_detections(
    preds: &PredictionSet,
    truths: &GroundTruthSet,
    iou_thresh: f64,
) -> Result<Vec<MatchOutcome>, EvalError> {
    check_iou_thresh(iou_thresh)?;
    let mut out = Vec::new();
    for (image_id, dets) in preds {
        let gts = truths.get(image_id).map(Vec::as_slice).unwrap_or(&[]);
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&a, &b| {
            dets[b]
                .confidence
                .total_cmp(&dets[a].confidence)
                .then(dets[a].bbox.x1.total_cmp(&dets[b].bbox.x1))
                .then(a.cmp(&b))
        });
        let mut taken = vec![false; gts.len()];
        for di in order {
            let d = &dets[di];
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if taken[gi] || g.class_id != d.class_id {
                    continue;
                }
                let v = iou(&d.bbox, &g.bbox);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((gi, v));
                }
            }
            let matched = best.filter(|&(_, v)| v >= iou_thresh).map(|(gi, _)| gi);
            if let Some(gi) = matched {
                taken[gi] = true;
            }
            out.push(MatchOutcome {
                image_id: image_id.clone(),
                detection: di,
                class_id: d.class_id,
                confidence: d.confidence,
                is_tp: matched.is_some(),
                matched_truth: matched,
            });
        }
    }
    // stable: equal confidences keep image-id then visiting order
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub total_gt: usize,
}

/// One point per prediction prefix, in descending confidence.
pub fn pr_curve(outcomes: &[MatchOutcome], total_gt: usize) -> PrCurve {
    let mut sorted: Vec<&MatchOutcome> = outcomes.iter().collect();
    sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut tp = 0usize;
    let points = sorted
        .iter()
        .enumerate()
        .map(|(i, o)| {
            tp += usize::from(o.is_tp);
            PrPoint {
                recall: if total_gt == 0 {
                    0.0
                } else {
                    tp as f64 / total_gt as f64
                },
                precision: tp as f64 / (i + 1) as f64,
                threshold: o.confidence,
            }
        })
        .collect();
    PrCurve { points, total_gt }
}

/// All-point interpolated AP: precision replaced by its running maximum from the
/// right, integrated over recall steps starting at recall 0.
pub fn average_precision(curve: &PrCurve) -> f64 {
    let n = curve.points.len();
    let mut envelope = vec![0.0f64; n];
    let mut run = 0.0f64;
    for i in (0..n).rev() {
        run = run.max(curve.points[i].precision);
        envelope[i] = run;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in curve.points.iter().zip(&envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    ap.clamp(0.0, 1.0)
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Point {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Best {
    pub threshold: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Curve {
    /// Ascending threshold.
    pub points: Vec<F1Point>,
    pub best: F1Best,
}

/// Micro-averaged precision/recall/F1 at thresholds `{0} ∪ distinct confidences`.
///
/// At threshold `t` only predictions with confidence `>= t` are kept. Because the
/// greedy matcher visits predictions by descending confidence, the kept set is a
/// prefix of every per-image visiting order and its matches are unchanged; the
/// sweep therefore reads cumulative counts off a single matching pass.
pub fn f1_curve(
    preds: &PredictionSet,
    truths: &GroundTruthSet,
    iou_thresh: f64,
) -> Result<F1Curve, EvalError> {
    let outcomes = match_detections(preds, truths, iou_thresh)?;
    let total_gt: usize = truths.values().map(Vec::len).sum();
    Ok(f1_curve_from_outcomes(&outcomes, total_gt))
}

fn f1_curve_from_outcomes(outcomes: &[MatchOutcome], total_gt: usize) -> F1Curve {
    // outcomes sorted by descending confidence; walk from the lowest threshold up
    let mut thresholds: Vec<f64> = outcomes.iter().map(|o| o.confidence).collect();
    thresholds.push(0.0);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut sorted: Vec<&MatchOutcome> = outcomes.iter().collect();
    sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));

    // kept(t), tp(t) for each threshold ascending: suffix scan from the top
    let mut points = Vec::with_capacity(thresholds.len());
    let mut kept = 0usize;
    let mut tp = 0usize;
    let mut cursor = 0usize;
    for &t in thresholds.iter().rev() {
        while cursor < sorted.len() && sorted[cursor].confidence >= t {
            kept += 1;
            tp += usize::from(sorted[cursor].is_tp);
            cursor += 1;
        }
        let precision = if kept == 0 { 0.0 } else { tp as f64 / kept as f64 };
        let recall = if total_gt == 0 {
            0.0
        } else {
            tp as f64 / total_gt as f64
        };
        points.push(F1Point {
            threshold: t,
            precision,
            recall,
            f1: f1(precision, recall),
        });
    }
    points.reverse();

    let mut best = F1Best {
        threshold: 0.0,
        f1: 0.0,
    };
    let mut first = true;
    for p in &points {
        // strict improvement only: ties stay on the smaller threshold
        if first || p.f1 > best.f1 {
            best = F1Best {
                threshold: p.threshold,
                f1: p.f1,
            };
            first = false;
        }
    }
    F1Curve { points, best }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalCounts {
    pub images: usize,
    pub gts: usize,
    pub preds: usize,
    pub tps: usize,
    pub fps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: u32,
    pub ap: f64,
    pub gts: usize,
    pub preds: usize,
    pub tps: usize,
    pub pr_curve: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_thresh: f64,
    /// Classes with at least one ground truth.
    pub per_class: BTreeMap<u32, ClassReport>,
    pub map: f64,
    pub f1_curve: F1Curve,
    pub counts: EvalCounts,
}

impl EvalReport {
    pub fn ap(&self, class_id: u32) -> Option<f64> {
        self.per_class.get(&class_id).map(|c| c.ap)
    }
}

/// Per-class AP, mAP over classes that have ground truth, and the pooled F1 sweep.
pub fn evaluate(
    preds: &PredictionSet,
    truths: &GroundTruthSet,
    iou_thresh: f64,
) -> Result<EvalReport, EvalError> {
    let outcomes = match_detections(preds, truths, iou_thresh)?;

    let mut gt_per_class: BTreeMap<u32, usize> = BTreeMap::new();
    for g in truths.values().flatten() {
        *gt_per_class.entry(g.class_id).or_default() += 1;
    }
    let total_gt: usize = gt_per_class.values().sum();

    let mut by_class: BTreeMap<u32, Vec<MatchOutcome>> = BTreeMap::new();
    for o in &outcomes {
        by_class.entry(o.class_id).or_default().push(o.clone());
    }

    let mut per_class = BTreeMap::new();
    for (&class_id, &gts) in &gt_per_class {
        let class_outcomes = by_class.remove(&class_id).unwrap_or_default();
        let curve = pr_curve(&class_outcomes, gts);
        per_class.insert(
            class_id,
            ClassReport {
                class_id,
                ap: average_precision(&curve),
                gts,
                preds: class_outcomes.len(),
                tps: class_outcomes.iter().filter(|o| o.is_tp).count(),
                pr_curve: curve,
            },
        );
    }
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().map(|c| c.ap).sum::<f64>() / per_class.len() as f64
    };

    let images: BTreeSet<&String> = preds.keys().chain(truths.keys()).collect();
    let tps = outcomes.iter().filter(|o| o.is_tp).count();
    Ok(EvalReport {
        iou_thresh,
        per_class,
        map,
        f1_curve: f1_curve_from_outcomes(&outcomes, total_gt),
        counts: EvalCounts {
            images: images.len(),
            gts: total_gt,
            preds: outcomes.len(),
            tps,
            fps: outcomes.len() - tps,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoxXYXY {
        BoxXYXY::new(x1, y1, x2, y2).unwrap()
    }

    fn gt(b: BoxXYXY) -> GroundTruth {
        GroundTruth {
            bbox: b,
            class_id: 0,
        }
    }

    fn det(b: BoxXYXY, c: f64) -> Detection {
        Detection::new(b, 0, c).unwrap()
    }

    fn outcome(is_tp: bool, confidence: f64) -> MatchOutcome {
        MatchOutcome {
            image_id: "i".into(),
            detection: 0,
            class_id: 0,
            confidence,
            is_tp,
            matched_truth: is_tp.then_some(0),
        }
    }

    #[test]
    fn perfect_match() {
        let b = bx(0., 0., 10., 10.);
        let preds = PredictionSet::from([("a".into(), vec![det(b, 0.7)])]);
        let truths = GroundTruthSet::from([("a".into(), vec![gt(b)])]);
        let out = match_detections(&preds, &truths, 0.5).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].is_tp);
        assert_eq!(out[0].matched_truth, Some(0));
    }

    #[test]
    fn no_predictions_no_outcomes() {
        let truths = GroundTruthSet::from([("a".into(), vec![gt(bx(0., 0., 1., 1.)); 3])]);
        let out = match_detections(&PredictionSet::new(), &truths, 0.5).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn higher_confidence_claims_truth_first() {
        // truth 0..10; A overlaps 0.6, B overlaps 0.9
        let truth = bx(0., 0., 10., 10.);
        let a = det(bx(0., 0., 10., 6.), 0.9);
        let b = det(bx(0., 0., 10., 9.), 0.8);
        assert!((iou(&a.bbox, &truth) - 0.6).abs() < 1e-12);
        assert!((iou(&b.bbox, &truth) - 0.9).abs() < 1e-12);
        let preds = PredictionSet::from([("a".into(), vec![b, a])]);
        let truths = GroundTruthSet::from([("a".into(), vec![gt(truth)])]);
        let out = match_detections(&preds, &truths, 0.5).unwrap();
        assert_eq!((out[0].confidence, out[0].is_tp), (0.9, true));
        assert_eq!((out[1].confidence, out[1].is_tp), (0.8, false));
    }

    #[test]
    fn classes_do_not_cross_match() {
        let b = bx(0., 0., 10., 10.);
        let mut d = det(b, 0.9);
        d.class_id = 1;
        let preds = PredictionSet::from([("a".into(), vec![d])]);
        let truths = GroundTruthSet::from([("a".into(), vec![gt(b)])]);
        assert!(!match_detections(&preds, &truths, 0.5).unwrap()[0].is_tp);
    }

    #[test]
    fn bad_threshold_rejected() {
        let e = PredictionSet::new();
        assert!(match_detections(&e, &GroundTruthSet::new(), 0.0).is_err());
        assert!(match_detections(&e, &GroundTruthSet::new(), 1.5).is_err());
    }

    #[test]
    fn pr_curve_examples() {
        let c = pr_curve(&[outcome(true, 0.9)], 1);
        assert_eq!(
            c.points,
            vec![PrPoint {
                recall: 1.0,
                precision: 1.0,
                threshold: 0.9
            }]
        );

        let c = pr_curve(&[outcome(false, 0.9), outcome(false, 0.8)], 1);
        assert!(c.points.iter().all(|p| p.precision == 0.0));

        let c = pr_curve(&[outcome(true, 0.9), outcome(false, 0.8), outcome(true, 0.7)], 2);
        let rp: Vec<(f64, f64)> = c.points.iter().map(|p| (p.recall, p.precision)).collect();
        assert_eq!(rp, vec![(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)]);

        assert!(pr_curve(&[], 0).points.is_empty());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&pr_curve(&[outcome(true, 0.9)], 1)), 1.0);
        assert_eq!(
            average_precision(&pr_curve(&[outcome(false, 0.9), outcome(false, 0.5)], 3)),
            0.0
        );
        let c = pr_curve(&[outcome(true, 0.9), outcome(false, 0.8), outcome(true, 0.7)], 2);
        assert!((average_precision(&c) - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(average_precision(&PrCurve::default()), 0.0);
    }

    #[test]
    fn f1_examples() {
        for x in [0.0, 0.1, 0.5, 1.0] {
            assert!((f1(x, x) - x).abs() < 1e-15);
        }
        assert_eq!(f1(0.0, 0.0), 0.0);
        assert!((f1(0.8, 0.6) - 0.685_714_285_714_285_7).abs() < 1e-12);
    }

    #[test]
    fn f1_curve_examples() {
        let b = bx(0., 0., 10., 10.);
        let preds = PredictionSet::from([("a".into(), vec![det(b, 0.4)])]);
        let truths = GroundTruthSet::from([("a".into(), vec![gt(b)])]);
        let c = f1_curve(&preds, &truths, 0.5).unwrap();
        assert_eq!(c.best.f1, 1.0);
        assert!(c.best.threshold <= 0.4);

        let c = f1_curve(&PredictionSet::new(), &truths, 0.5).unwrap();
        assert_eq!(c.best, F1Best { threshold: 0.0, f1: 0.0 });
    }

    #[test]
    fn f1_curve_prefers_higher_threshold_only_when_strictly_better() {
        let t1 = bx(0., 0., 10., 10.);
        let preds = PredictionSet::from([(
            "a".into(),
            vec![det(t1, 0.9), det(bx(50., 50., 60., 60.), 0.3)],
        )]);
        let truths = GroundTruthSet::from([("a".into(), vec![gt(t1)])]);
        let c = f1_curve(&preds, &truths, 0.5).unwrap();
        assert_eq!(c.best, F1Best { threshold: 0.9, f1: 1.0 });
        assert_eq!(c.points.len(), 3);
        assert_eq!(c.points[0].threshold, 0.0);
    }

    #[test]
    fn evaluate_perfect_single_class() {
        let b = bx(0., 0., 10., 10.);
        let preds = PredictionSet::from([("a".into(), vec![det(b, 0.8)])]);
        let truths = GroundTruthSet::from([("a".into(), vec![gt(b)])]);
        let r = evaluate(&preds, &truths, 0.5).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.ap(0), Some(1.0));
        assert_eq!(r.f1_curve.best.f1, 1.0);
        assert_eq!(
            r.counts,
            EvalCounts {
                images: 1,
                gts: 1,
                preds: 1,
                tps: 1,
                fps: 0
            }
        );
    }

    #[test]
    fn evaluate_ignores_classes_without_truth_in_map() {
        let b = bx(0., 0., 10., 10.);
        let mut stray = det(bx(20., 20., 30., 30.), 0.95);
        stray.class_id = 3;
        let preds = PredictionSet::from([("a".into(), vec![det(b, 0.8), stray])]);
        let truths = GroundTruthSet::from([("a".into(), vec![gt(b)])]);
        let r = evaluate(&preds, &truths, 0.5).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.per_class.len(), 1);
        assert_eq!(r.counts.fps, 1);
    }

    #[test]
    fn evaluate_empty() {
        let r = evaluate(&PredictionSet::new(), &GroundTruthSet::new(), 0.5).unwrap();
        assert_eq!(r.map, 0.0);
        assert_eq!(r.f1_curve.best.f1, 0.0);
    }
}
