use std::path::PathBuf;

use serde_json::json;
use smokewatch_core::dataset::{load_manifest, Split};
use smokewatch_core::eval::{evaluate, ground_truth_from_manifest, read_predictions, render_summary, write_report};
use smokewatch_core::EvalError;

use crate::output::{paint_out, Failure, BOLD};

pub struct Args {
    pub pred: PathBuf,
    pub truth: PathBuf,
    pub iou: f64,
    pub out: PathBuf,
    pub split: Option<Split>,
    pub json: bool,
}

pub fn run(a: &Args) -> Result<(), Failure> {
    let manifest = load_manifest(&a.truth).map_err(Failure::usage)?;
    let truths = ground_truth_from_manifest(&manifest, a.split);
    let preds = read_predictions(&a.pred).map_err(Failure::usage)?;
    let report = evaluate(&preds, &truths, a.iou).map_err(Failure::usage)?;
    write_report(&report, &manifest.class_names, &a.out).map_err(|e| match e {
        EvalError::Io { .. } | EvalError::Csv(_) => Failure::runtime(e),
        other => Failure::usage(other),
    })?;

    if a.json {
        let per_class: serde_json::Map<String, serde_json::Value> = report
            .per_class
            .iter()
            .map(|(id, c)| {
                let name = manifest
                    .class_names
                    .get(*id as usize)
                    .cloned()
                    .unwrap_or_else(|| format!("class{id}"));
                (
                    id.to_string(),
                    json!({"name": name, "ap": c.ap, "gts": c.gts, "preds": c.preds, "tps": c.tps}),
                )
            })
            .collect();
        let best = &report.f1_curve.best;
        let v = json!({
            "iou_thresh": report.iou_thresh,
            "map": report.map,
            "per_class": per_class,
            "best_f1": {"threshold": best.threshold, "f1": best.f1},
            "counts": report.counts,
            "out": a.out,
        });
        println!("{}", serde_json::to_string_pretty(&v).expect("report serializes"));
    } else {
        print!("{}", render_summary(&report, &manifest.class_names));
        println!("{} {}", paint_out("report written to", BOLD), a.out.display());
    }
    Ok(())
}
