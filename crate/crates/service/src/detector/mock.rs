use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use smokewatch_core::geometry::letterbox_plan;
use smokewatch_core::{BoxXYXY, Detection, Image};

use super::{BackendError, DetectorBackend, RawInference};

/// Coordinate frame of a fixture record's boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureFrame {
    /// Source image pixels; converted to the letterbox frame on lookup.
    #[default]
    Source,
    Letterbox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureDetection {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    #[serde(default)]
    pub class_id: u32,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRecord {
    pub image_id: String,
    #[serde(default)]
    pub frame: FixtureFrame,
    pub detections: Vec<FixtureDetection>,
}

/// Scripted detector output keyed by image id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default = "default_model_id")]
    pub model_id: String,
    #[serde(default)]
    pub records: Vec<MockRecord>,
}

fn default_model_id() -> String {
    "mock".to_string()
}

impl Default for MockFixture {
    fn default() -> Self {
        Self {
            model_id: default_model_id(),
            records: Vec::new(),
        }
    }
}

impl MockFixture {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let fixture: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        for r in &fixture.records {
            for d in &r.detections {
                BoxXYXY::new(d.x1, d.y1, d.x2, d.y2)
                    .and_then(|b| Detection::new(b, d.class_id, d.confidence))
                    .map_err(|e| format!("record {:?}: {e}", r.image_id))?;
            }
        }
        Ok(fixture)
    }
}

/// Deterministic backend replaying a [`MockFixture`]. Unknown image ids yield no
/// detections.
pub struct MockBackend {
    model_id: String,
    records: HashMap<String, MockRecord>,
    input_side: u32,
}

impl MockBackend {
    pub fn new(fixture: MockFixture, input_side: u32) -> Self {
        Self {
            model_id: fixture.model_id,
            records: fixture
                .records
                .into_iter()
                .map(|r| (r.image_id.clone(), r))
                .collect(),
            input_side,
        }
    }
}

#[async_trait]
impl DetectorBackend for MockBackend {
    async fn detect(&self, image_id: &str, img: &Image) -> Result<RawInference, BackendError> {
        let t = letterbox_plan(img.width(), img.height(), self.input_side)
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let detections = match self.records.get(image_id) {
            None => Vec::new(),
            Some(r) => r
                .detections
                .iter()
                .map(|d| {
                    let b = BoxXYXY {
                        x1: d.x1,
                        y1: d.y1,
                        x2: d.x2,
                        y2: d.y2,
                    };
                    let bbox = match r.frame {
                        FixtureFrame::Source => t.forward(&b),
                        FixtureFrame::Letterbox => b,
                    };
                    Detection {
                        bbox,
                        class_id: d.class_id,
                        confidence: d.confidence,
                    }
                })
                .collect(),
        };
        Ok(RawInference {
            detections,
            model_id: self.model_id.clone(),
            latency: Duration::ZERO,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"{
        "model_id": "mock-smoke",
        "records": [
            {"image_id": "cam1/000123", "frame": "letterbox",
             "detections": [{"x1": 10, "y1": 20, "x2": 110, "y2": 220, "class_id": 0, "confidence": 0.91}]},
            {"image_id": "cam1/000124",
             "detections": [{"x1": 0, "y1": 0, "x2": 1280, "y2": 720, "confidence": 0.5}]}
        ]
    }"#;

    #[tokio::test]
    async fn scripted_and_default_outputs() {
        let m = MockBackend::new(MockFixture::parse(FIXTURE).unwrap(), 640);
        let img = Image::filled(1280, 720, [0, 0, 0]).unwrap();

        let hit = m.detect("cam1/000123", &img).await.unwrap();
        assert_eq!(hit.model_id, "mock-smoke");
        assert_eq!(hit.detections.len(), 1);
        assert_eq!(hit.detections[0].confidence, 0.91);
        assert_eq!(hit.detections[0].bbox, BoxXYXY::new(10., 20., 110., 220.).unwrap());

        let src = m.detect("cam1/000124", &img).await.unwrap();
        assert_eq!(src.detections[0].bbox, BoxXYXY::new(0., 140., 640., 500.).unwrap());

        assert!(m.detect("cam9/000001", &img).await.unwrap().detections.is_empty());
    }

    #[tokio::test]
    async fn repeated_calls_are_identical() {
        let m = MockBackend::new(MockFixture::parse(FIXTURE).unwrap(), 640);
        let img = Image::filled(1280, 720, [0, 0, 0]).unwrap();
        let a = m.detect("cam1/000124", &img).await.unwrap();
        let b = m.detect("cam1/000124", &img).await.unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_fixture_rejected() {
        let bad = r#"{"records":[{"image_id":"x","detections":[{"x1":0,"y1":0,"x2":1,"y2":1,"confidence":2}]}]}"#;
        assert!(MockFixture::parse(bad).is_err());
    }
}
