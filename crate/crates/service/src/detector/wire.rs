//! JSON wire format spoken with external model servers (`POST /infer`).
//!
//! The server letterboxes the image to `input_side` (aspect-preserving, bilinear,
//! centered, padding 114), feeds RGB values scaled to `[0,1]` in channel-major
//! layout to its model, and returns boxes in the letterbox frame.

use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use smokewatch_core::{BoxXYXY, Detection, Image};
use thiserror::Error;

use super::RawInference;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {reason}")]
pub struct ProtocolError {
    pub field: String,
    pub reason: String,
}

impl ProtocolError {
    fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelEncoding {
    Png,
    Jpeg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferRequest {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub pixel_encoding: PixelEncoding,
    /// Base64 of the encoded image bytes.
    pub pixels: String,
    pub input_side: u32,
    pub conf_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub class_id: u32,
    #[serde(default)]
    pub class_name: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferResponse {
    pub model_id: String,
    pub detections: Vec<WireDetection>,
    pub latency_ms: f64,
}

fn parse<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, ProtocolError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "body".to_string() } else { path };
        ProtocolError::new(field, e.into_inner().to_string())
    })
}

pub fn encode_request(
    image_id: &str,
    img: &Image,
    input_side: u32,
    conf_floor: f64,
) -> Result<Vec<u8>, ProtocolError> {
    let png = img
        .encode_png()
        .map_err(|e| ProtocolError::new("pixels", e.to_string()))?;
    let req = InferRequest {
        image_id: image_id.to_string(),
        width: img.width(),
        height: img.height(),
        pixel_encoding: PixelEncoding::Png,
        pixels: base64::engine::general_purpose::STANDARD.encode(png),
        input_side,
        conf_floor,
    };
    Ok(serde_json::to_vec(&req).expect("request is always serializable"))
}

/// Parses and validates a request, decoding its image.
pub fn decode_request(bytes: &[u8]) -> Result<(InferRequest, Image), ProtocolError> {
    let req: InferRequest = parse(bytes)?;
    let raw = base64::engine::general_purpose::STANDARD
        .decode(&req.pixels)
        .map_err(|e| ProtocolError::new("pixels", e.to_string()))?;
    let img = Image::decode(&raw).map_err(|e| ProtocolError::new("pixels", e.to_string()))?;
    if (img.width(), img.height()) != (req.width, req.height) {
        return Err(ProtocolError::new(
            "width",
            format!(
                "declared {}x{}, image is {}x{}",
                req.width,
                req.height,
                img.width(),
                img.height()
            ),
        ));
    }
    if req.input_side == 0 {
        return Err(ProtocolError::new("input_side", "must be positive"));
    }
    if !(0.0..=1.0).contains(&req.conf_floor) {
        return Err(ProtocolError::new("conf_floor", "out of range"));
    }
    Ok((req, img))
}

pub fn encode_response(resp: &InferResponse) -> Vec<u8> {
    serde_json::to_vec(resp).expect("response is always serializable")
}

/// Parses and validates a response body.
pub fn decode_response(bytes: &[u8]) -> Result<InferResponse, ProtocolError> {
    let resp: InferResponse = parse(bytes)?;
    for (i, d) in resp.detections.iter().enumerate() {
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(ProtocolError::new(
                format!("detections[{i}].confidence"),
                "confidence out of range",
            ));
        }
        if BoxXYXY::new(d.x1, d.y1, d.x2, d.y2).is_err() {
            return Err(ProtocolError::new(
                format!("detections[{i}]"),
                "box corners out of order",
            ));
        }
    }
    if !(resp.latency_ms.is_finite() && resp.latency_ms >= 0.0) {
        return Err(ProtocolError::new("latency_ms", "must be a non-negative number"));
    }
    Ok(resp)
}

impl From<InferResponse> for RawInference {
    fn from(resp: InferResponse) -> Self {
        Self {
            detections: resp
                .detections
                .iter()
                .map(|d| Detection {
                    bbox: BoxXYXY {
                        x1: d.x1,
                        y1: d.y1,
                        x2: d.x2,
                        y2: d.y2,
                    },
                    class_id: d.class_id,
                    confidence: d.confidence,
                })
                .collect(),
            model_id: resp.model_id,
            latency: Duration::from_secs_f64(resp.latency_ms / 1000.0),
        }
    }
}
