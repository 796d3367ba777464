//! Seeded synthetic scenes on an integer pixel grid.
//!
//! Integer corners keep intersection and union areas exact in `f64`, so every
//! IoU comparison is reproducible across independently written code.

use rand::{Rng, RngCore};
use smokewatch_core::eval::{GroundTruth, GroundTruthSet, PredictionSet};
use smokewatch_core::{BoxXYXY, Detection};

#[derive(Debug, Clone, Copy)]
pub struct SceneParams {
    pub images: usize,
    pub max_truths: usize,
    pub max_preds: usize,
    pub classes: u32,
    /// Image side in pixels.
    pub extent: u32,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            images: 20,
            max_truths: 5,
            max_preds: 8,
            classes: 2,
            extent: 64,
        }
    }
}

pub fn random_box(rng: &mut dyn RngCore, extent: u32) -> BoxXYXY {
    let x1 = rng.random_range(0..extent - 1);
    let y1 = rng.random_range(0..extent - 1);
    let x2 = rng.random_range(x1 + 1..=extent);
    let y2 = rng.random_range(y1 + 1..=extent);
    BoxXYXY::new(x1.into(), y1.into(), x2.into(), y2.into()).unwrap()
}

fn jitter(rng: &mut dyn RngCore, b: &BoxXYXY, extent: u32, amount: i64) -> BoxXYXY {
    let e = i64::from(extent);
    let mut j = |v: f64| (v as i64 + rng.random_range(-amount..=amount)).clamp(0, e);
    let (mut x1, mut y1, mut x2, mut y2) = (j(b.x1), j(b.y1), j(b.x2), j(b.y2));
    if x1 > x2 {
        std::mem::swap(&mut x1, &mut x2);
    }
    if y1 > y2 {
        std::mem::swap(&mut y1, &mut y2);
    }
    BoxXYXY::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64).unwrap()
}

/// Confidences are drawn on a 0.01 grid so that ties occur.
fn confidence(rng: &mut dyn RngCore) -> f64 {
    f64::from(rng.random_range(1..=100u32)) / 100.0
}

/// One scene: `images` images, each with up to `max_truths` truths and up to
/// `max_preds` predictions. Roughly half the predictions are jittered copies of
/// truths, the rest are random boxes.
pub fn random_scene(rng: &mut dyn RngCore, p: &SceneParams) -> (PredictionSet, GroundTruthSet) {
    let mut preds = PredictionSet::new();
    let mut truths = GroundTruthSet::new();
    for i in 0..p.images {
        let id = format!("img{i:03}");
        let n_gt = rng.random_range(0..=p.max_truths);
        let gts: Vec<GroundTruth> = (0..n_gt)
            .map(|_| GroundTruth {
                bbox: random_box(rng, p.extent),
                class_id: rng.random_range(0..p.classes),
            })
            .collect();
        let n_pred = rng.random_range(0..=p.max_preds);
        let dets: Vec<Detection> = (0..n_pred)
            .map(|_| {
                let (bbox, class_id) = if !gts.is_empty() && rng.random_bool(0.5) {
                    let g = &gts[rng.random_range(0..gts.len())];
                    let class = if rng.random_bool(0.9) {
                        g.class_id
                    } else {
                        rng.random_range(0..p.classes)
                    };
                    (jitter(rng, &g.bbox, p.extent, 4), class)
                } else {
                    (random_box(rng, p.extent), rng.random_range(0..p.classes))
                };
                Detection::new(bbox, class_id, confidence(rng)).unwrap()
            })
            .collect();
        // images may appear in only one of the two sets
        if !gts.is_empty() || rng.random_bool(0.5) {
            truths.insert(id.clone(), gts);
        }
        if !dets.is_empty() {
            preds.insert(id, dets);
        }
    }
    (preds, truths)
}

/// `n` random detections over an `extent` square, continuous coordinates.
pub fn random_detections(rng: &mut dyn RngCore, n: usize, extent: f64, classes: u32) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            let x1 = rng.random_range(0.0..extent * 0.9);
            let y1 = rng.random_range(0.0..extent * 0.9);
            let w = rng.random_range(1.0..extent * 0.1);
            let h = rng.random_range(1.0..extent * 0.1);
            Detection::new(
                BoxXYXY::new(x1, y1, x1 + w, y1 + h).unwrap(),
                rng.random_range(0..classes),
                rng.random_range(0.0..=1.0),
            )
            .unwrap()
        })
        .collect()
}
