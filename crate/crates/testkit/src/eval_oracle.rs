//! Brute-force evaluation: explicit per-prefix counting, an envelope computed by
//! nested maxima, and an F1 sweep that re-runs matching from scratch at every
//! threshold.

use std::collections::{BTreeMap, BTreeSet};

use smokewatch_core::eval::{GroundTruthSet, PredictionSet};
use smokewatch_core::BoxXYXY;

/// Overlap via interval lengths.
fn overlap_ratio(a: &BoxXYXY, b: &BoxXYXY) -> f64 {
    let ix = f64::max(0.0, f64::min(a.x2, b.x2) - f64::max(a.x1, b.x1));
    let iy = f64::max(0.0, f64::min(a.y2, b.y2) - f64::max(a.y1, b.y1));
    let inter = ix * iy;
    let area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
    let area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
    let union = area_a + area_b - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// One scored prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub image_id: String,
    pub class_id: u32,
    pub confidence: f64,
    pub tp: bool,
}

/// Keeps only predictions with confidence `>= t`.
pub fn filter_preds(preds: &PredictionSet, t: f64) -> PredictionSet {
    preds
        .iter()
        .map(|(k, v)| (k.clone(), v.iter().copied().filter(|d| d.confidence >= t).collect()))
        .collect()
}

/// Greedy matching in the documented visiting order, returned in the documented
/// global order (confidence desc, image id asc, visiting order).
pub fn oracle_match(preds: &PredictionSet, truths: &GroundTruthSet, thr: f64) -> Vec<OracleOutcome> {
    // (confidence, image_id, x1, index)
    let mut keys: Vec<(f64, &String, f64, usize)> = Vec::new();
    for (img, dets) in preds {
        for (i, d) in dets.iter().enumerate() {
            keys.push((d.confidence, img, d.bbox.x1, i));
        }
    }
    keys.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| a.1.cmp(b.1))
            .then_with(|| a.2.partial_cmp(&b.2).unwrap())
            .then_with(|| a.3.cmp(&b.3))
    });

    let mut used: BTreeSet<(&String, usize)> = BTreeSet::new();
    let mut out = Vec::with_capacity(keys.len());
    for (conf, img, _, i) in keys {
        let d = preds[img][i];
        let empty = Vec::new();
        let gts = truths.get(img).unwrap_or(&empty);
        let mut best_iou = -1.0;
        let mut best_j = None;
        for (j, g) in gts.iter().enumerate() {
            if g.class_id != d.class_id || used.contains(&(img, j)) {
                continue;
            }
            let v = overlap_ratio(&d.bbox, &g.bbox);
            if v > best_iou {
                best_iou = v;
                best_j = Some(j);
            }
        }
        let tp = match best_j {
            Some(j) if best_iou >= thr => {
                used.insert((img, j));
                true
            }
            _ => false,
        };
        out.push(OracleOutcome {
            image_id: img.clone(),
            class_id: d.class_id,
            confidence: conf,
            tp,
        });
    }
    out
}

/// AP by enumerating every prefix and recounting it from scratch.
pub fn oracle_ap(ordered: &[bool], total_gt: usize) -> f64 {
    let n = ordered.len();
    let prefix = |k: usize| -> (f64, f64) {
        let tp = ordered[..k].iter().filter(|&&t| t).count() as f64;
        let r = if total_gt == 0 { 0.0 } else { tp / total_gt as f64 };
        (tp / k as f64, r)
    };
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for k in 1..=n {
        let (_, r) = prefix(k);
        let mut env: f64 = 0.0;
        for j in k..=n {
            env = env.max(prefix(j).0);
        }
        ap += (r - prev_r) * env;
        prev_r = r;
    }
    ap
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub per_class_ap: BTreeMap<u32, f64>,
    pub map: f64,
    pub tps: usize,
    pub fps: usize,
}

pub fn oracle_evaluate(preds: &PredictionSet, truths: &GroundTruthSet, thr: f64) -> OracleReport {
    let outcomes = oracle_match(preds, truths, thr);
    let mut gt_count: BTreeMap<u32, usize> = BTreeMap::new();
    for gts in truths.values() {
        for g in gts {
            *gt_count.entry(g.class_id).or_insert(0) += 1;
        }
    }
    let mut per_class_ap = BTreeMap::new();
    for (&c, &n) in &gt_count {
        let seq: Vec<bool> = outcomes.iter().filter(|o| o.class_id == c).map(|o| o.tp).collect();
        per_class_ap.insert(c, oracle_ap(&seq, n));
    }
    let map = if per_class_ap.is_empty() {
        0.0
    } else {
        per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64
    };
    let tps = outcomes.iter().filter(|o| o.tp).count();
    OracleReport {
        per_class_ap,
        map,
        tps,
        fps: outcomes.len() - tps,
    }
}

fn kept_count(preds: &PredictionSet, t: f64) -> usize {
    preds.values().flatten().filter(|d| d.confidence >= t).count()
}

/// Best `(threshold, f1)` over distinct confidences ∪ a 1,001-point grid on [0,1],
/// re-matching at every threshold. Ties go to the smallest threshold; that
/// threshold is then reported as the smallest member of `{0} ∪ confidences`
/// selecting the same predictions.
pub fn oracle_best_f1(preds: &PredictionSet, truths: &GroundTruthSet, thr: f64) -> (f64, f64) {
    let confs: Vec<f64> = preds.values().flatten().map(|d| d.confidence).collect();
    let mut thresholds: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
    thresholds.extend(confs.iter().copied());
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();

    let total_gt: usize = truths.values().map(Vec::len).sum();
    let mut best: Option<(f64, f64)> = None;
    for &t in &thresholds {
        let kept = filter_preds(preds, t);
        let outcomes = oracle_match(&kept, truths, thr);
        let n = outcomes.len();
        let tp = outcomes.iter().filter(|o| o.tp).count();
        let p = if n == 0 { 0.0 } else { tp as f64 / n as f64 };
        let r = if total_gt == 0 { 0.0 } else { tp as f64 / total_gt as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        match best {
            Some((_, bf)) if f <= bf => {}
            _ => best = Some((t, f)),
        }
    }
    let (t, f) = best.expect("grid is never empty");

    let target = kept_count(preds, t);
    let mut candidates = confs;
    candidates.push(0.0);
    let effective = candidates
        .into_iter()
        .filter(|&c| kept_count(preds, c) == target)
        .fold(f64::INFINITY, f64::min);
    // only an empty selection has no candidate; that happens with no predictions
    let effective = if effective.is_finite() { effective } else { 0.0 };
    (effective, f)
}
