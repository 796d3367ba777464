use std::path::PathBuf;

use smokewatch_core::Image;
use smokewatch_service::detector::{build_backend, BackendError, BackendKind, Detector, DetectorConfig};

use crate::output::{paint_out, Failure, BOLD, GREEN};

pub struct Args {
    pub image: PathBuf,
    pub external: bool,
    pub fixture: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub image_id: Option<String>,
    pub conf: Option<f64>,
    pub annotate: Option<PathBuf>,
    pub json: bool,
}

pub fn run(a: Args) -> Result<(), Failure> {
    let bytes = std::fs::read(&a.image)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", a.image.display())))?;
    let img = Image::decode(&bytes).map_err(|e| Failure::usage(format!("{}: {e}", a.image.display())))?;
    let image_id = a.image_id.clone().unwrap_or_else(|| {
        a.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });

    let mut cfg = DetectorConfig {
        backend: if a.external { BackendKind::External } else { BackendKind::Mock },
        endpoint: a.endpoint.clone(),
        fixture_path: a.fixture.clone(),
        ..DetectorConfig::default()
    };
    if let Some(c) = a.conf {
        cfg.conf_floor = c;
    }
    let backend = build_backend(&cfg).map_err(Failure::usage)?;
    let detector = Detector::new(backend, cfg);

    let rt = tokio::runtime::Runtime::new().map_err(Failure::runtime)?;
    let out = rt.block_on(detector.run(&image_id, &img, &[])).map_err(|e| match e {
        BackendError::Config(_) => Failure::usage(e),
        other => Failure::runtime(format!("detector backend: {other}")),
    })?;

    if let Some(path) = &a.annotate {
        let mut drawn = img.clone();
        for d in &out.detections {
            drawn.draw_rect(&d.bbox, [255, 0, 0], 2);
        }
        let jpeg = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("jpg") || e.eq_ignore_ascii_case("jpeg"));
        let encoded = if jpeg { drawn.encode_jpeg() } else { drawn.encode_png() }.map_err(Failure::runtime)?;
        std::fs::write(path, encoded).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    }

    if a.json {
        let v = serde_json::json!({
            "image_id": image_id,
            "width": img.width(),
            "height": img.height(),
            "model_id": out.raw.model_id,
            "latency_ms": out.elapsed.as_secs_f64() * 1000.0,
            "detections": out.detections,
        });
        println!("{}", serde_json::to_string_pretty(&v).expect("detections serialize"));
        return Ok(());
    }

    println!(
        "{} {} ({}x{}), model {}, {} detection(s)",
        paint_out("image", BOLD),
        image_id,
        img.width(),
        img.height(),
        out.raw.model_id,
        out.detections.len()
    );
    if !out.detections.is_empty() {
        println!(
            "{}",
            paint_out(&format!("{:>5}  {:>10}  {:>8}  {:>8}  {:>8}  {:>8}", "class", "confidence", "x1", "y1", "x2", "y2"), GREEN)
        );
    }
    for d in &out.detections {
        println!(
            "{:>5}  {:>10.4}  {:>8.1}  {:>8.1}  {:>8.1}  {:>8.1}",
            d.class_id, d.confidence, d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2
        );
    }
    Ok(())
}
