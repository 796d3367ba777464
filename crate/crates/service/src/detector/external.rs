use std::time::Duration;

use async_trait::async_trait;
use smokewatch_core::Image;

use super::wire::{decode_response, encode_request};
use super::{BackendError, DetectorBackend, RawInference};

/// Client for a model server speaking the [`wire`](super::wire) protocol.
pub struct ExternalBackend {
    url: String,
    client: reqwest::Client,
    input_side: u32,
    conf_floor: f64,
    timeout: Duration,
}

impl ExternalBackend {
    /// `endpoint` is the server base URL; `/infer` is appended unless present.
    pub fn new(
        endpoint: String,
        input_side: u32,
        conf_floor: f64,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let trimmed = endpoint.trim_end_matches('/');
        let url = if trimmed.ends_with("/infer") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/infer")
        };
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            url,
            client,
            input_side,
            conf_floor,
            timeout,
        })
    }
}

#[async_trait]
impl DetectorBackend for ExternalBackend {
    async fn detect(&self, image_id: &str, img: &Image) -> Result<RawInference, BackendError> {
        let body = encode_request(image_id, img, self.input_side, self.conf_floor)?;
        let resp = self
            .client
            .post(&self.url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body)
            .send()
            .await
            .map_err(|e| {
                if e.is_timeout() {
                    BackendError::Timeout(self.timeout)
                } else {
                    BackendError::Unreachable(format!("{}: {e}", self.url))
                }
            })?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(self.timeout)
            } else {
                BackendError::Unreachable(e.to_string())
            }
        })?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).chars().take(200).collect(),
            });
        }
        Ok(decode_response(&bytes)?.into())
    }
}
