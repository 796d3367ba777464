use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{AlertEvent, AlertKind};
use crate::clock::Timestamp;

/// Waits before each webhook retry.
pub const DEFAULT_RETRY_DELAYS: [Duration; 3] = [
    Duration::from_secs(1),
    Duration::from_secs(5),
    Duration::from_secs(25),
];

#[async_trait]
pub trait Sink: Send + Sync {
    fn name(&self) -> String;

    /// Whether this sink wants events of `kind` at all.
    fn accepts(&self, _kind: AlertKind) -> bool {
        true
    }

    /// Delivers one event. Returns the number of attempts made.
    async fn deliver(&self, event: &AlertEvent) -> Result<u32, (u32, String)>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeliveryResult {
    pub sink: String,
    pub delivered: bool,
    pub attempts: u32,
    pub error: Option<String>,
}

/// Delivers `event` to every sink concurrently. A failing sink never holds up
/// or hides the result of another.
pub async fn dispatch(event: &AlertEvent, sinks: &[Arc<dyn Sink>]) -> Vec<DeliveryResult> {
    let futs = sinks.iter().filter(|s| s.accepts(event.kind)).map(|s| async move {
        match s.deliver(event).await {
            Ok(attempts) => DeliveryResult {
                sink: s.name(),
                delivered: true,
                attempts,
                error: None,
            },
            Err((attempts, e)) => {
                tracing::warn!(sink = %s.name(), alert = %event.alert_id, "delivery failed: {e}");
                DeliveryResult {
                    sink: s.name(),
                    delivered: false,
                    attempts,
                    error: Some(e),
                }
            }
        }
    });
    futures::future::join_all(futs).await
}

/// Body POSTed to webhooks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebhookPayload {
    pub alert_id: String,
    pub camera_id: String,
    pub kind: AlertKind,
    pub at: Timestamp,
    pub max_confidence: f64,
    pub frame_seq: u64,
}

impl From<&AlertEvent> for WebhookPayload {
    fn from(e: &AlertEvent) -> Self {
        Self {
            alert_id: e.alert_id.clone(),
            camera_id: e.camera_id.clone(),
            kind: e.kind,
            at: e.at,
            max_confidence: e.trigger.max_confidence,
            frame_seq: e.frame_seq,
        }
    }
}

pub struct WebhookSink {
    url: String,
    kinds: Vec<AlertKind>,
    client: reqwest::Client,
    retry_delays: Vec<Duration>,
}

impl WebhookSink {
    pub fn new(url: impl Into<String>, kinds: Vec<AlertKind>) -> Self {
        Self {
            url: url.into(),
            kinds,
            client: reqwest::Client::builder()
                .timeout(Duration::from_secs(10))
                .build()
                .expect("static client configuration"),
            retry_delays: DEFAULT_RETRY_DELAYS.to_vec(),
        }
    }

    pub fn with_retry_delays(mut self, delays: Vec<Duration>) -> Self {
        self.retry_delays = delays;
        self
    }

    async fn post(&self, body: &WebhookPayload) -> Result<(), String> {
        let resp = self
            .client
            .post(&self.url)
            .json(body)
            .send()
            .await
            .map_err(|e| e.to_string())?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(format!("HTTP {}", resp.status()))
        }
    }
}

#[async_trait]
impl Sink for WebhookSink {
    fn name(&self) -> String {
        format!("webhook:{}", self.url)
    }

    fn accepts(&self, kind: AlertKind) -> bool {
        self.kinds.contains(&kind)
    }

    async fn deliver(&self, event: &AlertEvent) -> Result<u32, (u32, String)> {
        let body = WebhookPayload::from(event);
        let mut attempts = 0;
        let mut last_err = String::new();
        for delay in std::iter::once(None).chain(self.retry_delays.iter().map(Some)) {
            if let Some(d) = delay {
                tokio::time::sleep(*d).await;
            }
            attempts += 1;
            match self.post(&body).await {
                Ok(()) => return Ok(attempts),
                Err(e) => last_err = e,
            }
        }
        Err((attempts, last_err))
    }
}

/// Appends one JSON line per event.
pub struct LogSink {
    path: PathBuf,
    lock: Mutex<()>,
}

impl LogSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }
}

#[async_trait]
impl Sink for LogSink {
    fn name(&self) -> String {
        format!("log:{}", self.path.display())
    }

    async fn deliver(&self, event: &AlertEvent) -> Result<u32, (u32, String)> {
        let mut line = serde_json::to_string(event).expect("event is serializable");
        line.push('\n');
        let _g = self.lock.lock();
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map(|()| 1)
            .map_err(|e| (1, e.to_string()))
    }
}
