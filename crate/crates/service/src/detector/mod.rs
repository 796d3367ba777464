//! The detector boundary: a uniform `detect` contract, a scripted mock backend,
//! an HTTP client for external model servers, and post-processing of raw output
//! (confidence floor, map back to source pixels, exclusion masks, NMS).

mod external;
mod mock;
pub mod wire;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use smokewatch_core::geometry::{letterbox_plan, nms, DEFAULT_INPUT_SIDE};
use smokewatch_core::{Detection, Image, LetterboxTransform};
use thiserror::Error;
use tokio::sync::Semaphore;

pub use external::ExternalBackend;
pub use mock::{FixtureFrame, MockBackend, MockFixture, MockRecord};
pub use wire::ProtocolError;

/// Best-F1 operating point of the reference smoke model.
pub const DEFAULT_CONF_FLOOR: f64 = 0.298;
pub const DEFAULT_NMS_IOU: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub backend: BackendKind,
    pub endpoint: Option<String>,
    #[serde(rename = "fixture")]
    pub fixture_path: Option<PathBuf>,
    pub input_side: u32,
    pub conf_floor: f64,
    pub nms_iou: f64,
    pub timeout_ms: u64,
    /// Upper bound on concurrent `detect` calls; `None` defers to the backend.
    pub max_concurrency: Option<usize>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            endpoint: None,
            fixture_path: None,
            input_side: DEFAULT_INPUT_SIDE,
            conf_floor: DEFAULT_CONF_FLOOR,
            nms_iou: DEFAULT_NMS_IOU,
            timeout_ms: 10_000,
            max_concurrency: None,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.conf_floor) {
            return Err(format!("conf_floor {} outside [0,1]", self.conf_floor));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(format!("nms_iou {} outside [0,1]", self.nms_iou));
        }
        if self.input_side == 0 {
            return Err("input_side must be positive".into());
        }
        if self.backend == BackendKind::External && self.endpoint.is_none() {
            return Err("external backend needs an endpoint".into());
        }
        if self.max_concurrency == Some(0) {
            return Err("max_concurrency must be positive".into());
        }
        Ok(())
    }
}

/// Operator-drawn rectangle in normalized image coordinates. Detections whose box
/// center falls inside it are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExclusionMask {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl ExclusionMask {
    pub fn validate(&self) -> Result<(), String> {
        let in_unit = [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| (0.0..=1.0).contains(v));
        if in_unit && self.x1 < self.x2 && self.y1 < self.y2 {
            Ok(())
        } else {
            Err(format!(
                "mask ({}, {}, {}, {}) is not a positive-area rectangle inside [0,1]²",
                self.x1, self.y1, self.x2, self.y2
            ))
        }
    }

    /// Inclusive on all edges.
    pub fn contains(&self, nx: f64, ny: f64) -> bool {
        (self.x1..=self.x2).contains(&nx) && (self.y1..=self.y2).contains(&ny)
    }
}

/// Decoded detector output, boxes in the letterbox frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawInference {
    pub detections: Vec<Detection>,
    pub model_id: String,
    pub latency: Duration,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("detector backend unreachable: {0}")]
    Unreachable(String),
    #[error("detector backend timed out after {0:?}")]
    Timeout(Duration),
    #[error("detector backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("detector protocol violation: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("detector backend misconfigured: {0}")]
    Config(String),
}

#[async_trait]
pub trait DetectorBackend: Send + Sync {
    /// Runs inference on `img`. Detections come back in the letterbox frame of
    /// the configured input side.
    async fn detect(&self, image_id: &str, img: &Image) -> Result<RawInference, BackendError>;

    /// `Some(1)` for backends that cannot take overlapping calls.
    fn max_concurrency(&self) -> Option<usize> {
        None
    }
}

pub fn build_backend(cfg: &DetectorConfig) -> Result<Arc<dyn DetectorBackend>, BackendError> {
    cfg.validate().map_err(BackendError::Config)?;
    Ok(match cfg.backend {
        BackendKind::Mock => {
            let fixture = match &cfg.fixture_path {
                Some(p) => MockFixture::load(p).map_err(BackendError::Config)?,
                None => MockFixture::default(),
            };
            Arc::new(MockBackend::new(fixture, cfg.input_side))
        }
        BackendKind::External => Arc::new(ExternalBackend::new(
            cfg.endpoint.clone().unwrap_or_default(),
            cfg.input_side,
            cfg.conf_floor,
            Duration::from_millis(cfg.timeout_ms),
        )?),
    })
}

/// Filter, map back, mask and suppress, in that order. Output is sorted by
/// descending confidence.
pub fn postprocess(
    raw: &RawInference,
    t: &LetterboxTransform,
    cfg: &DetectorConfig,
    masks: &[ExclusionMask],
) -> Vec<Detection> {
    let (w, h) = (f64::from(t.src_w), f64::from(t.src_h));
    let survivors: Vec<Detection> = raw
        .detections
        .iter()
        .filter(|d| d.confidence >= cfg.conf_floor)
        .map(|d| Detection {
            bbox: t.map_back(&d.bbox),
            ..*d
        })
        .filter(|d| {
            let (cx, cy) = d.bbox.center();
            !masks.iter().any(|m| m.contains(cx / w, cy / h))
        })
        .collect();
    nms(&survivors, cfg.nms_iou)
}

/// Backend plus its post-processing config and a concurrency gate.
pub struct Detector {
    backend: Arc<dyn DetectorBackend>,
    cfg: DetectorConfig,
    permits: Option<Semaphore>,
}

#[derive(Debug, Clone)]
pub struct DetectOutcome {
    pub raw: RawInference,
    pub transform: LetterboxTransform,
    pub detections: Vec<Detection>,
    pub elapsed: Duration,
}

impl Detector {
    pub fn new(backend: Arc<dyn DetectorBackend>, cfg: DetectorConfig) -> Self {
        let limit = match (cfg.max_concurrency, backend.max_concurrency()) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        Self {
            backend,
            cfg,
            permits: limit.map(Semaphore::new),
        }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub async fn run(
        &self,
        image_id: &str,
        img: &Image,
        masks: &[ExclusionMask],
    ) -> Result<DetectOutcome, BackendError> {
        let _permit = match &self.permits {
            Some(s) => Some(s.acquire().await.expect("semaphore never closed")),
            None => None,
        };
        let started = Instant::now();
        let transform = letterbox_plan(img.width(), img.height(), self.cfg.input_side)
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let raw = self.backend.detect(image_id, img).await?;
        let detections = postprocess(&raw, &transform, &self.cfg, masks);
        Ok(DetectOutcome {
            raw,
            transform,
            detections,
            elapsed: started.elapsed(),
        })
    }
}
