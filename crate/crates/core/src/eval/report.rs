use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalReport, F1Curve, GroundTruth, GroundTruthSet, PredictionSet};
use crate::dataset::{DatasetManifest, Split};
use crate::error::EvalError;
use crate::geometry::{BoxXYXY, Detection};

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    image_id: String,
    class_id: u32,
    confidence: f64,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

/// Reads a predictions CSV (`image_id,class_id,confidence,x1,y1,x2,y2`, pixel
/// coordinates of the source image).
pub fn read_predictions(path: &Path) -> Result<PredictionSet, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut set = PredictionSet::new();
    for (i, row) in reader.deserialize::<PredictionRow>().enumerate() {
        let bad = |reason: String| EvalError::Predictions {
            record: i + 1,
            reason,
        };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let det = BoxXYXY::new(row.x1, row.y1, row.x2, row.y2)
            .and_then(|b| Detection::new(b, row.class_id, row.confidence))
            .map_err(|e| bad(e.to_string()))?;
        set.entry(row.image_id).or_default().push(det);
    }
    Ok(set)
}

pub fn write_predictions(preds: &PredictionSet, path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for (image_id, dets) in preds {
        for d in dets {
            w.serialize(PredictionRow {
                image_id: image_id.clone(),
                class_id: d.class_id,
                confidence: d.confidence,
                x1: d.bbox.x1,
                y1: d.bbox.y1,
                x2: d.bbox.x2,
                y2: d.bbox.y2,
            })?;
        }
    }
    w.flush().map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Ground truth in pixel coordinates for every sample (optionally one split only).
/// Images without boxes are kept as empty entries.
pub fn ground_truth_from_manifest(manifest: &DatasetManifest, split: Option<Split>) -> GroundTruthSet {
    manifest
        .samples
        .iter()
        .filter(|s| split.is_none() || manifest.split_of.get(&s.image_id) == split.as_ref())
        .map(|s| {
            let boxes = s
                .boxes
                .iter()
                .map(|b| GroundTruth {
                    bbox: b.to_xyxy(s.image_w, s.image_h),
                    class_id: b.class_id,
                })
                .collect();
            (s.image_id.clone(), boxes)
        })
        .collect()
}

fn class_name(names: &[String], id: u32) -> String {
    names
        .get(id as usize)
        .cloned()
        .unwrap_or_else(|| format!("class{id}"))
}

/// Human-readable summary block.
pub fn render_summary(report: &EvalReport, class_names: &[String]) -> String {
    let c = &report.counts;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "images: {}  ground truths: {}  predictions: {}  TP: {}  FP: {}",
        c.images, c.gts, c.preds, c.tps, c.fps
    );
    for (id, cls) in &report.per_class {
        let _ = writeln!(
            s,
            "AP[{}]@{}: {:.3}",
            class_name(class_names, *id),
            report.iou_thresh,
            cls.ap
        );
    }
    let _ = writeln!(s, "mAP@{}: {:.3}", report.iou_thresh, report.map);
    let _ = writeln!(
        s,
        "best F1: {:.3} at confidence {:.3}",
        report.f1_curve.best.f1, report.f1_curve.best.threshold
    );
    s
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| EvalError::Csv(e.into_error().into()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), EvalError> {
    fs::write(path, bytes).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Serialize)]
struct SummaryRow {
    iou_thresh: f64,
    map: f64,
    best_f1: f64,
    best_threshold: f64,
    images: usize,
    gts: usize,
    preds: usize,
    tps: usize,
    fps: usize,
}

pub fn write_summary_csv(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let c = &report.counts;
    let row = SummaryRow {
        iou_thresh: report.iou_thresh,
        map: report.map,
        best_f1: report.f1_curve.best.f1,
        best_threshold: report.f1_curve.best.threshold,
        images: c.images,
        gts: c.gts,
        preds: c.preds,
        tps: c.tps,
        fps: c.fps,
    };
    write_file(path, &csv_bytes([row])?)
}

#[derive(Serialize)]
struct PrRow<'a> {
    class_id: u32,
    class_name: &'a str,
    recall: f64,
    precision: f64,
    threshold: f64,
}

pub fn write_pr_csv(report: &EvalReport, class_names: &[String], path: &Path) -> Result<(), EvalError> {
    let names: Vec<(u32, String)> = report
        .per_class
        .keys()
        .map(|&id| (id, class_name(class_names, id)))
        .collect();
    let rows = report.per_class.values().zip(&names).flat_map(|(cls, (_, name))| {
        cls.pr_curve.points.iter().map(move |p| PrRow {
            class_id: cls.class_id,
            class_name: name,
            recall: p.recall,
            precision: p.precision,
            threshold: p.threshold,
        })
    });
    write_file(path, &csv_bytes(rows)?)
}

pub fn write_f1_csv(curve: &F1Curve, path: &Path) -> Result<(), EvalError> {
    write_file(path, &csv_bytes(curve.points.iter())?)
}

const SVG_W: f64 = 480.0;
const SVG_H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn svg_frame(title: &str, x_label: &str, y_label: &str) -> String {
    let (pw, ph) = (SVG_W - 2.0 * MARGIN, SVG_H - 2.0 * MARGIN);
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}" font-family="sans-serif" font-size="11">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>
<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>
"#,
        SVG_W / 2.0
    );
    for i in 0..=5 {
        let v = f64::from(i) / 5.0;
        let x = MARGIN + v * pw;
        let y = MARGIN + (1.0 - v) * ph;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">{v:.1}</text><text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#,
            SVG_H - MARGIN + 14.0,
            MARGIN - 4.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text><text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        SVG_W / 2.0,
        SVG_H - 10.0,
        SVG_H / 2.0,
        SVG_H / 2.0
    );
    s
}

fn polyline(points: impl Iterator<Item = (f64, f64)>, color: &str) -> String {
    let (pw, ph) = (SVG_W - 2.0 * MARGIN, SVG_H - 2.0 * MARGIN);
    let coords: Vec<String> = points
        .map(|(x, y)| format!("{:.2},{:.2}", MARGIN + x * pw, MARGIN + (1.0 - y) * ph))
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        coords.join(" ")
    )
}

pub fn render_svg_pr(report: &EvalReport, class_names: &[String]) -> String {
    let mut s = svg_frame("Precision-Recall", "Recall", "Precision");
    for (i, (id, cls)) in report.per_class.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts = std::iter::once((0.0, 1.0))
            .chain(cls.pr_curve.points.iter().map(|p| (p.recall, p.precision)));
        s.push_str(&polyline(pts, color));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" fill="{color}">{} {:.3}</text>"#,
            SVG_W - MARGIN - 6.0,
            MARGIN + 16.0 + 14.0 * i as f64,
            class_name(class_names, *id),
            cls.ap
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn render_svg_f1(curve: &F1Curve) -> String {
    let mut s = svg_frame("F1-Confidence", "Confidence", "F1");
    s.push_str(&polyline(
        curve.points.iter().map(|p| (p.threshold, p.f1)),
        PALETTE[1],
    ));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">best {:.3} at {:.3}</text>"#,
        SVG_W - MARGIN - 6.0,
        MARGIN + 16.0,
        curve.best.f1,
        curve.best.threshold
    );
    s.push_str("</svg>\n");
    s
}

/// Writes `summary.csv`, `pr_curve.csv`, `f1_curve.csv`, `pr_curve.svg`,
/// `f1_curve.svg` and `summary.txt` into `dir`.
pub fn write_report(report: &EvalReport, class_names: &[String], dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_summary_csv(report, &dir.join("summary.csv"))?;
    write_pr_csv(report, class_names, &dir.join("pr_curve.csv"))?;
    write_f1_csv(&report.f1_curve, &dir.join("f1_curve.csv"))?;
    write_file(&dir.join("pr_curve.svg"), render_svg_pr(report, class_names).as_bytes())?;
    write_file(&dir.join("f1_curve.svg"), render_svg_f1(&report.f1_curve).as_bytes())?;
    write_file(
        &dir.join("summary.txt"),
        render_summary(report, class_names).as_bytes(),
    )
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::eval::{ClassReport, EvalCounts, F1Best, F1Point, PrCurve, PrPoint};

    /// Report carrying injected headline values, no matching behind it.
    fn injected(map: f64, best_f1: f64, best_t: f64) -> EvalReport {
        EvalReport {
            iou_thresh: 0.5,
            per_class: BTreeMap::from([(
                0,
                ClassReport {
                    class_id: 0,
                    ap: map,
                    gts: 79,
                    preds: 120,
                    tps: 60,
                    pr_curve: PrCurve {
                        points: vec![PrPoint {
                            recall: 0.7,
                            precision: 0.8,
                            threshold: 0.3,
                        }],
                        total_gt: 79,
                    },
                },
            )]),
            map,
            f1_curve: F1Curve {
                points: vec![F1Point {
                    threshold: best_t,
                    precision: 0.8,
                    recall: 0.69,
                    f1: best_f1,
                }],
                best: F1Best {
                    threshold: best_t,
                    f1: best_f1,
                },
            },
            counts: EvalCounts {
                images: 79,
                gts: 79,
                preds: 120,
                tps: 60,
                fps: 60,
            },
        }
    }

    #[test]
    fn summary_renders_headline_numbers() {
        let names = vec!["smoke".to_string()];
        let s = render_summary(&injected(0.698, 0.74, 0.298), &names);
        assert!(s.contains("mAP@0.5: 0.698"), "{s}");
        assert!(s.contains("AP[smoke]@0.5: 0.698"), "{s}");
        assert!(s.contains("best F1: 0.740 at confidence 0.298"), "{s}");

        for (map, f, t, line) in [
            (0.379, 0.44, 0.215, "best F1: 0.440 at confidence 0.215"),
            (0.684, 0.69, 0.313, "best F1: 0.690 at confidence 0.313"),
        ] {
            let s = render_summary(&injected(map, f, t), &names);
            assert!(s.contains(&format!("mAP@0.5: {map:.3}")) && s.contains(line), "{s}");
        }
    }

    #[test]
    fn report_files_written() {
        let dir = tempfile::tempdir().unwrap();
        let r = injected(0.698, 0.74, 0.298);
        write_report(&r, &["smoke".into()], dir.path()).unwrap();
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(
            summary,
            "iou_thresh,map,best_f1,best_threshold,images,gts,preds,tps,fps\n0.5,0.698,0.74,0.298,79,79,120,60,60\n"
        );
        let pr = fs::read_to_string(dir.path().join("pr_curve.csv")).unwrap();
        assert!(pr.starts_with("class_id,class_name,recall,precision,threshold\n0,smoke,0.7,0.8,0.3"));
        let f1 = fs::read_to_string(dir.path().join("f1_curve.csv")).unwrap();
        assert!(f1.starts_with("threshold,precision,recall,f1\n"));
        let svg = fs::read_to_string(dir.path().join("pr_curve.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
    }

    #[test]
    fn predictions_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let d = Detection::new(BoxXYXY::new(1.5, 2.0, 3.25, 4.0).unwrap(), 0, 0.875).unwrap();
        let preds = PredictionSet::from([("img/1".to_string(), vec![d])]);
        write_predictions(&preds, &path).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), preds);

        fs::write(&path, "image_id,class_id,confidence,x1,y1,x2,y2\na,0,1.5,0,0,1,1\n").unwrap();
        assert!(matches!(
            read_predictions(&path),
            Err(EvalError::Predictions { record: 1, .. })
        ));
    }
}
