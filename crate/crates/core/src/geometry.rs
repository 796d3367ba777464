//! Bounding boxes, IoU, greedy NMS and the letterbox transform.
//!
//! Boxes are half-open real rectangles in pixel space: `area = (x2 - x1) * (y2 - y1)`,
//! no "+1" pixel convention.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Tolerance applied to normalized box edges before they are clamped into `[0, 1]`.
pub const EDGE_EPSILON: f64 = 1e-6;

/// Default square side expected by the detector family.
pub const DEFAULT_INPUT_SIDE: u32 = 640;

/// Axis-aligned box in pixel corner form, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxXYXY {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoxXYXY {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let b = Self { x1, y1, x2, y2 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(GeometryError::InvalidBox { x1, y1, x2, y2 })
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
            && self.x1 <= self.x2
            && self.y1 <= self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn intersection_area(&self, other: &Self) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Clamps the box into `[0, w] x [0, h]`.
    pub fn clamp_to(&self, w: f64, h: f64) -> Self {
        Self {
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            x2: self.x2.clamp(0.0, w),
            y2: self.y2.clamp(0.0, h),
        }
    }
}

/// Intersection over union. Zero when the union has no area.
pub fn iou(a: &BoxXYXY, b: &BoxXYXY) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Box in normalized center form, as written in darknet-style label files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YoloBox {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl YoloBox {
    /// Validates the normalized box. Edges that stick out of the unit square by at
    /// most [`EDGE_EPSILON`] are clamped back in; anything further is rejected.
    pub fn new(class_id: u32, cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let bad = |reason: &str| GeometryError::InvalidYoloBox {
            reason: reason.to_string(),
        };
        if ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(bad("non-finite value"));
        }
        if !(0.0..=1.0).contains(&cx) || !(0.0..=1.0).contains(&cy) {
            return Err(bad("center outside [0,1]"));
        }
        if !(w > 0.0 && w <= 1.0 + EDGE_EPSILON && h > 0.0 && h <= 1.0 + EDGE_EPSILON) {
            return Err(bad("size outside (0,1]"));
        }
        let (mut left, mut right) = (cx - w / 2.0, cx + w / 2.0);
        let (mut top, mut bottom) = (cy - h / 2.0, cy + h / 2.0);
        if left < -EDGE_EPSILON || top < -EDGE_EPSILON {
            return Err(bad("edge below 0"));
        }
        if right > 1.0 + EDGE_EPSILON || bottom > 1.0 + EDGE_EPSILON {
            return Err(bad("edge above 1"));
        }
        if left >= 0.0 && top >= 0.0 && right <= 1.0 && bottom <= 1.0 {
            return Ok(Self { class_id, cx, cy, w, h });
        }
        left = left.max(0.0);
        top = top.max(0.0);
        right = right.min(1.0);
        bottom = bottom.min(1.0);
        Ok(Self {
            class_id,
            cx: (left + right) / 2.0,
            cy: (top + bottom) / 2.0,
            w: right - left,
            h: bottom - top,
        })
    }

    pub fn to_xyxy(&self, img_w: u32, img_h: u32) -> BoxXYXY {
        let (iw, ih) = (f64::from(img_w), f64::from(img_h));
        BoxXYXY {
            x1: (self.cx - self.w / 2.0) * iw,
            y1: (self.cy - self.h / 2.0) * ih,
            x2: (self.cx + self.w / 2.0) * iw,
            y2: (self.cy + self.h / 2.0) * ih,
        }
        .clamp_to(iw, ih)
    }

    /// Inverse of [`YoloBox::to_xyxy`]. The result is not re-validated; a
    /// zero-area pixel box yields a zero-size normalized box.
    pub fn from_xyxy(b: &BoxXYXY, class_id: u32, img_w: u32, img_h: u32) -> Self {
        let (iw, ih) = (f64::from(img_w), f64::from(img_h));
        Self {
            class_id,
            cx: (b.x1 + b.x2) / 2.0 / iw,
            cy: (b.y1 + b.y2) / 2.0 / ih,
            w: (b.x2 - b.x1) / iw,
            h: (b.y2 - b.y1) / ih,
        }
    }
}

pub fn yolo_to_xyxy(b: &YoloBox, img_w: u32, img_h: u32) -> BoxXYXY {
    b.to_xyxy(img_w, img_h)
}

pub fn xyxy_to_yolo(b: &BoxXYXY, class_id: u32, img_w: u32, img_h: u32) -> YoloBox {
    YoloBox::from_xyxy(b, class_id, img_w, img_h)
}

/// One detector output: a box, its class and a confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoxXYXY,
    pub class_id: u32,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BoxXYXY, class_id: u32, confidence: f64) -> Result<Self, GeometryError> {
        let d = Self {
            bbox,
            class_id,
            confidence,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.bbox.is_valid() {
            let b = self.bbox;
            return Err(GeometryError::InvalidBox {
                x1: b.x1,
                y1: b.y1,
                x2: b.x2,
                y2: b.y2,
            });
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(GeometryError::ConfidenceOutOfRange(self.confidence));
        }
        Ok(())
    }
}

/// Descending confidence, then ascending x1, then ascending y1.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.bbox.x1.total_cmp(&b.bbox.x1))
        .then(a.bbox.y1.total_cmp(&b.bbox.y1))
}

/// Greedy per-class non-maximum suppression.
///
/// A detection survives iff its IoU with every already kept detection of the same
/// class is below `iou_thresh`. Output is in descending-confidence order.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(detection_order);

    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    // indices into `kept`, grouped by class
    let mut by_class: std::collections::HashMap<u32, Vec<usize>> = Default::default();
    for det in sorted {
        let same = by_class.entry(det.class_id).or_default();
        if same
            .iter()
            .all(|&k| iou(&kept[k].bbox, &det.bbox) < iou_thresh)
        {
            same.push(kept.len());
            kept.push(det);
        }
    }
    kept
}

/// Aspect-preserving resize of a `src_w x src_h` image into a `dst_side` square,
/// centered with symmetric padding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LetterboxTransform {
    pub scale: f64,
    pub pad_x: f64,
    pub pad_y: f64,
    pub src_w: u32,
    pub src_h: u32,
    pub dst_side: u32,
}

pub fn letterbox_plan(src_w: u32, src_h: u32, dst_side: u32) -> Result<LetterboxTransform, GeometryError> {
    if src_w == 0 || src_h == 0 || dst_side == 0 {
        return Err(GeometryError::ZeroDimension);
    }
    let side = f64::from(dst_side);
    let scale = (side / f64::from(src_w)).min(side / f64::from(src_h));
    Ok(LetterboxTransform {
        scale,
        pad_x: ((side - f64::from(src_w) * scale) / 2.0).max(0.0),
        pad_y: ((side - f64::from(src_h) * scale) / 2.0).max(0.0),
        src_w,
        src_h,
        dst_side,
    })
}

impl LetterboxTransform {
    pub fn identity(w: u32, h: u32) -> Self {
        Self {
            scale: 1.0,
            pad_x: 0.0,
            pad_y: 0.0,
            src_w: w,
            src_h: h,
            dst_side: w.max(h),
        }
    }

    /// Source frame to letterbox frame.
    pub fn forward(&self, b: &BoxXYXY) -> BoxXYXY {
        BoxXYXY {
            x1: b.x1 * self.scale + self.pad_x,
            y1: b.y1 * self.scale + self.pad_y,
            x2: b.x2 * self.scale + self.pad_x,
            y2: b.y2 * self.scale + self.pad_y,
        }
    }

    /// Letterbox frame back to source frame, clamped to the source image.
    pub fn map_back(&self, b: &BoxXYXY) -> BoxXYXY {
        BoxXYXY {
            x1: (b.x1 - self.pad_x) / self.scale,
            y1: (b.y1 - self.pad_y) / self.scale,
            x2: (b.x2 - self.pad_x) / self.scale,
            y2: (b.y2 - self.pad_y) / self.scale,
        }
        .clamp_to(f64::from(self.src_w), f64::from(self.src_h))
    }
}

pub fn map_back(b: &BoxXYXY, t: &LetterboxTransform) -> BoxXYXY {
    t.map_back(b)
}
