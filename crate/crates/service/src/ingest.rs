//! Camera registry and still-image polling.
//!
//! Each camera is fetched over plain HTTP(S) on its own interval. Failures back
//! off exponentially (`interval * 2^failures`, capped at 15 minutes) and reset on
//! the next success. Timing flows through the caller-supplied `now`, so the
//! scheduler runs unchanged under a simulated clock.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use chrono::TimeDelta;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use smokewatch_core::{Image, ImageError};
use thiserror::Error;
use tokio::sync::Notify;

use crate::clock::Timestamp;
use crate::detector::{ExclusionMask, DEFAULT_CONF_FLOOR};

pub const DEFAULT_POLL_INTERVAL_S: u64 = 30;
pub const FETCH_TIMEOUT: Duration = Duration::from_secs(10);
pub const MAX_BACKOFF: Duration = Duration::from_secs(15 * 60);
pub const MAX_REDIRECTS: usize = 3;
pub const USER_AGENT: &str = concat!("smokewatch-ingest/", env!("CARGO_PKG_VERSION"));

fn default_interval() -> u64 {
    DEFAULT_POLL_INTERVAL_S
}

fn default_threshold() -> f64 {
    DEFAULT_CONF_FLOOR
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub id: String,
    #[serde(default)]
    pub name: String,
    pub url: String,
    /// Seconds between polls.
    #[serde(default = "default_interval")]
    pub poll_interval: u64,
    /// Alarm threshold on post-processed detection confidence.
    #[serde(default = "default_threshold")]
    pub conf_threshold: f64,
    #[serde(default)]
    pub masks: Vec<ExclusionMask>,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

fn config_error(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        field,
        reason: reason.into(),
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.id.is_empty()
            || !self
                .id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(config_error("id", "use letters, digits, '-' or '_'"));
        }
        match reqwest::Url::parse(&self.url) {
            Ok(u) if matches!(u.scheme(), "http" | "https") => {}
            Ok(u) => return Err(config_error("url", format!("unsupported scheme {}", u.scheme()))),
            Err(e) => return Err(config_error("url", e.to_string())),
        }
        if self.poll_interval < 1 {
            return Err(config_error("poll_interval", "must be at least 1 second"));
        }
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return Err(config_error("conf_threshold", "must be within [0,1]"));
        }
        for m in &self.masks {
            m.validate().map_err(|r| config_error("masks", r))?;
        }
        Ok(())
    }

    pub fn apply(&self, patch: &CameraPatch) -> Self {
        let mut c = self.clone();
        if let Some(t) = patch.conf_threshold {
            c.conf_threshold = t;
        }
        if let Some(m) = &patch.masks {
            c.masks = m.clone();
        }
        if let Some(i) = patch.poll_interval {
            c.poll_interval = i;
        }
        if let Some(e) = patch.enabled {
            c.enabled = e;
        }
        c
    }
}

/// Fields an operator may change on a live camera.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conf_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<Vec<ExclusionMask>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poll_interval: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub camera_id: String,
    pub seq: u64,
    pub fetched_at: Timestamp,
    pub image: Image,
}

impl Frame {
    /// Id handed to the detector, e.g. `cam1/000042`.
    pub fn image_id(&self) -> String {
        format!("{}/{:06}", self.camera_id, self.seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PollState {
    Ok,
    BackingOff,
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Network,
    Status,
    Decode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("{kind:?} failure: {message}")]
pub struct PollFailure {
    pub kind: FailureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollStatus {
    pub camera_id: String,
    pub state: PollState,
    pub consecutive_failures: u32,
    pub next_attempt: Timestamp,
    #[serde(default)]
    pub last_success: Option<Timestamp>,
    #[serde(default)]
    pub last_failure: Option<PollFailure>,
}

/// `min(interval * 2^failures, 15 min)`.
pub fn backoff_delay(poll_interval_s: u64, failures: u32) -> Duration {
    let factor = 2u64.checked_pow(failures).unwrap_or(u64::MAX);
    let secs = poll_interval_s.saturating_mul(factor);
    Duration::from_secs(secs).min(MAX_BACKOFF)
}

fn delta(d: Duration) -> TimeDelta {
    TimeDelta::from_std(d).expect("bounded delay")
}

pub fn http_client() -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(FETCH_TIMEOUT)
        .redirect(reqwest::redirect::Policy::limited(MAX_REDIRECTS))
        .user_agent(USER_AGENT)
        .build()
        .expect("static client configuration")
}

pub fn decode_image(bytes: &[u8]) -> Result<Image, ImageError> {
    Image::decode(bytes)
}

/// One HTTP GET of a camera still.
pub async fn fetch_still(client: &reqwest::Client, url: &str) -> Result<Image, PollFailure> {
    let network = |e: reqwest::Error| PollFailure {
        kind: FailureKind::Network,
        status: None,
        message: e.to_string(),
    };
    let resp = client.get(url).send().await.map_err(network)?;
    let status = resp.status();
    if !status.is_success() {
        return Err(PollFailure {
            kind: FailureKind::Status,
            status: Some(status.as_u16()),
            message: format!("HTTP {status}"),
        });
    }
    let body = resp.bytes().await.map_err(network)?;
    decode_image(&body).map_err(|e| PollFailure {
        kind: FailureKind::Decode,
        status: Some(status.as_u16()),
        message: e.to_string(),
    })
}

/// Scheduling state for every registered camera.
#[derive(Debug, Default)]
pub struct Poller {
    cameras: BTreeMap<String, CameraConfig>,
    status: BTreeMap<String, PollStatus>,
    in_flight: BTreeSet<String>,
    last_seq: BTreeMap<String, u64>,
}

impl Poller {
    pub fn new() -> Self {
        Self::default()
    }

    /// Brings the registry in line with `cameras`. New cameras are due at `now`.
    pub fn sync<'a>(&mut self, cameras: impl IntoIterator<Item = &'a CameraConfig>, now: Timestamp) {
        let mut seen = BTreeSet::new();
        for cam in cameras {
            seen.insert(cam.id.clone());
            let st = self
                .status
                .entry(cam.id.clone())
                .or_insert_with(|| PollStatus {
                    camera_id: cam.id.clone(),
                    state: PollState::Ok,
                    consecutive_failures: 0,
                    next_attempt: now,
                    last_success: None,
                    last_failure: None,
                });
            match (cam.enabled, st.state) {
                (false, _) => st.state = PollState::Disabled,
                (true, PollState::Disabled) => {
                    st.state = PollState::Ok;
                    st.consecutive_failures = 0;
                    st.next_attempt = now;
                }
                _ => {}
            }
            self.cameras.insert(cam.id.clone(), cam.clone());
        }
        self.cameras.retain(|id, _| seen.contains(id));
        self.status.retain(|id, _| seen.contains(id));
    }

    /// Continue frame numbering after a restart.
    pub fn set_last_seq(&mut self, camera_id: &str, seq: u64) {
        self.last_seq.insert(camera_id.to_string(), seq);
    }

    /// Enabled cameras whose next attempt is due and that have no fetch in
    /// flight, ordered by id.
    pub fn scheduler_tick(&self, now: Timestamp) -> Vec<String> {
        self.cameras
            .values()
            .filter(|c| c.enabled && !self.in_flight.contains(&c.id))
            .filter(|c| self.status.get(&c.id).is_some_and(|s| s.next_attempt <= now))
            .map(|c| c.id.clone())
            .collect()
    }

    /// [`Poller::scheduler_tick`] and mark the returned cameras in flight.
    pub fn claim_due(&mut self, now: Timestamp) -> Vec<CameraConfig> {
        let due = self.scheduler_tick(now);
        due.into_iter()
            .map(|id| {
                self.in_flight.insert(id.clone());
                self.cameras[&id].clone()
            })
            .collect()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    /// Records a successful fetch and returns the frame sequence number.
    pub fn complete_success(&mut self, camera_id: &str, now: Timestamp) -> Option<u64> {
        self.in_flight.remove(camera_id);
        let cam = self.cameras.get(camera_id)?;
        let st = self.status.get_mut(camera_id)?;
        let interval = delta(Duration::from_secs(cam.poll_interval));
        // keep cadence anchored on the deadline; resync if we fell behind
        let mut next = if st.consecutive_failures == 0 {
            st.next_attempt + interval
        } else {
            now + interval
        };
        if next <= now {
            next = now + interval;
        }
        st.next_attempt = next;
        st.consecutive_failures = 0;
        st.last_success = Some(now);
        if st.state != PollState::Disabled {
            st.state = PollState::Ok;
        }
        let seq = self.last_seq.entry(camera_id.to_string()).or_insert(0);
        *seq += 1;
        Some(*seq)
    }

    pub fn complete_failure(
        &mut self,
        camera_id: &str,
        failure: PollFailure,
        now: Timestamp,
    ) -> Option<PollStatus> {
        self.in_flight.remove(camera_id);
        let cam = self.cameras.get(camera_id)?;
        let st = self.status.get_mut(camera_id)?;
        st.consecutive_failures += 1;
        st.next_attempt = now + delta(backoff_delay(cam.poll_interval, st.consecutive_failures));
        st.last_failure = Some(failure);
        if st.state != PollState::Disabled {
            st.state = PollState::BackingOff;
        }
        Some(st.clone())
    }

    pub fn status(&self, camera_id: &str) -> Option<&PollStatus> {
        self.status.get(camera_id)
    }

    pub fn statuses(&self) -> impl Iterator<Item = &PollStatus> {
        self.status.values()
    }
}

/// Bounded hand-off between pollers and the detector. When full, the oldest
/// queued frame of the incoming camera is dropped (or the oldest overall if that
/// camera has nothing queued).
#[derive(Debug)]
pub struct FrameQueue {
    frames: Mutex<VecDeque<Frame>>,
    capacity: usize,
    dropped: AtomicU64,
    notify: Notify,
}

impl FrameQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            frames: Mutex::new(VecDeque::new()),
            capacity: capacity.max(1),
            dropped: AtomicU64::new(0),
            notify: Notify::new(),
        }
    }

    pub fn push(&self, frame: Frame) -> Option<Frame> {
        let evicted = {
            let mut q = self.frames.lock();
            let evicted = if q.len() >= self.capacity {
                let victim = q
                    .iter()
                    .position(|f| f.camera_id == frame.camera_id)
                    .unwrap_or(0);
                q.remove(victim)
            } else {
                None
            };
            q.push_back(frame);
            evicted
        };
        if evicted.is_some() {
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        self.notify.notify_one();
        evicted
    }

    /// Takes up to `max` frames, oldest first, at most one per camera.
    pub fn pop_batch(&self, max: usize) -> Vec<Frame> {
        let mut q = self.frames.lock();
        let mut cams = BTreeSet::new();
        let mut taken = Vec::new();
        let mut i = 0;
        while i < q.len() && taken.len() < max {
            if cams.insert(q[i].camera_id.clone()) {
                taken.push(q.remove(i).expect("index in range"));
            } else {
                i += 1;
            }
        }
        taken
    }

    pub fn len(&self) -> usize {
        self.frames.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub async fn wait(&self) {
        self.notify.notified().await
    }
}
