//! Per-camera alarm debouncing and alert events.
//!
//! An alarm is raised when at least `k` of the last `n` observations are positive,
//! and cleared after `m` consecutive negatives. A cooldown after clearing blocks
//! the next raise.

mod dispatch;

use std::collections::VecDeque;

use chrono::TimeDelta;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;

pub use dispatch::{dispatch, DeliveryResult, LogSink, Sink, WebhookPayload, WebhookSink, DEFAULT_RETRY_DELAYS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlarmParams {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    /// Seconds.
    pub cooldown: u64,
}

impl Default for AlarmParams {
    fn default() -> Self {
        Self {
            n: 5,
            k: 3,
            m: 10,
            cooldown: 300,
        }
    }
}

impl AlarmParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.n == 0 || self.m == 0 {
            return Err("n and m must be positive".into());
        }
        if self.k == 0 || self.k > self.n {
            return Err(format!("k must be within 1..={}", self.n));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub camera_id: String,
    pub frame_seq: u64,
    pub at: Timestamp,
    pub positive: bool,
    pub max_confidence: f64,
    pub detection_count: usize,
}

impl FrameObservation {
    /// Positive iff some detection reaches `threshold`. `max_confidence` is 0
    /// for an empty frame.
    pub fn from_confidences(
        camera_id: &str,
        frame_seq: u64,
        at: Timestamp,
        confidences: impl IntoIterator<Item = f64>,
        threshold: f64,
    ) -> Self {
        let (mut count, mut max) = (0usize, 0.0f64);
        for c in confidences {
            count += 1;
            max = max.max(c);
        }
        Self {
            camera_id: camera_id.to_string(),
            frame_seq,
            at,
            positive: count > 0 && max >= threshold,
            max_confidence: max,
            detection_count: count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Active,
    Acknowledged,
    Cooldown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub positive: bool,
    pub max_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmState {
    pub camera_id: String,
    pub phase: Phase,
    pub window: VecDeque<WindowEntry>,
    /// Consecutive negatives ending at the latest observation.
    pub negative_run: usize,
    pub active_alert_id: Option<String>,
    pub cooldown_until: Option<Timestamp>,
    pub last_seq: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    Raised,
    Acknowledged,
    Cleared,
}

impl AlertKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Raised => "raised",
            Self::Acknowledged => "acknowledged",
            Self::Cleared => "cleared",
        }
    }
}

/// Window statistics at the moment an event fired.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub positives: usize,
    pub window: usize,
    pub max_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub alert_id: String,
    pub camera_id: String,
    pub kind: AlertKind,
    pub at: Timestamp,
    pub trigger: Trigger,
    pub frame_seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlarmError {
    #[error("frame {got} for camera {camera} is not after frame {last}")]
    OutOfOrder { camera: String, last: u64, got: u64 },
    #[error("observation for camera {got} applied to camera {expected}")]
    WrongCamera { expected: String, got: String },
    #[error("alert {0} not found")]
    NotFound(String),
    #[error("alert {alert_id} is {phase:?}, not active")]
    InvalidState { alert_id: String, phase: Phase },
}

pub fn alert_id(camera_id: &str, frame_seq: u64) -> String {
    format!("{camera_id}-{frame_seq:06}")
}

impl AlarmState {
    pub fn new(camera_id: impl Into<String>) -> Self {
        Self {
            camera_id: camera_id.into(),
            phase: Phase::Idle,
            window: VecDeque::new(),
            negative_run: 0,
            active_alert_id: None,
            cooldown_until: None,
            last_seq: None,
        }
    }

    pub fn positives(&self) -> usize {
        self.window.iter().filter(|e| e.positive).count()
    }

    fn trigger(&self) -> Trigger {
        Trigger {
            positives: self.positives(),
            window: self.window.len(),
            max_confidence: self
                .window
                .iter()
                .map(|e| e.max_confidence)
                .fold(0.0, f64::max),
        }
    }

    fn event(&self, alert_id: String, kind: AlertKind, at: Timestamp, frame_seq: u64) -> AlertEvent {
        AlertEvent {
            alert_id,
            camera_id: self.camera_id.clone(),
            kind,
            at,
            trigger: self.trigger(),
            frame_seq,
            operator: None,
        }
    }

    /// Applies one observation. Emits at most one event.
    pub fn update(
        &mut self,
        obs: &FrameObservation,
        params: &AlarmParams,
    ) -> Result<Vec<AlertEvent>, AlarmError> {
        if obs.camera_id != self.camera_id {
            return Err(AlarmError::WrongCamera {
                expected: self.camera_id.clone(),
                got: obs.camera_id.clone(),
            });
        }
        if let Some(last) = self.last_seq {
            if obs.frame_seq <= last {
                return Err(AlarmError::OutOfOrder {
                    camera: self.camera_id.clone(),
                    last,
                    got: obs.frame_seq,
                });
            }
        }
        self.last_seq = Some(obs.frame_seq);
        self.window.push_back(WindowEntry {
            positive: obs.positive,
            max_confidence: obs.max_confidence,
        });
        while self.window.len() > params.n {
            self.window.pop_front();
        }
        self.negative_run = if obs.positive { 0 } else { self.negative_run + 1 };

        if self.phase == Phase::Cooldown && self.cooldown_until.is_none_or(|u| obs.at >= u) {
            self.phase = Phase::Idle;
        }
        let mut events = Vec::new();
        match self.phase {
            Phase::Idle => {
                let cooled = self.cooldown_until.is_none_or(|u| obs.at >= u);
                if cooled && self.positives() >= params.k {
                    let id = alert_id(&self.camera_id, obs.frame_seq);
                    self.phase = Phase::Active;
                    self.active_alert_id = Some(id.clone());
                    events.push(self.event(id, AlertKind::Raised, obs.at, obs.frame_seq));
                }
            }
            Phase::Active | Phase::Acknowledged => {
                if self.negative_run >= params.m {
                    let id = self.active_alert_id.take().expect("active phase carries an alert id");
                    self.phase = Phase::Cooldown;
                    self.cooldown_until = Some(obs.at + TimeDelta::seconds(params.cooldown as i64));
                    events.push(self.event(id, AlertKind::Cleared, obs.at, obs.frame_seq));
                }
            }
            Phase::Cooldown => {}
        }
        Ok(events)
    }

    pub fn acknowledge(
        &mut self,
        alert_id: &str,
        operator: Option<String>,
        at: Timestamp,
    ) -> Result<AlertEvent, AlarmError> {
        if self.active_alert_id.as_deref() != Some(alert_id) {
            return Err(AlarmError::NotFound(alert_id.to_string()));
        }
        if self.phase != Phase::Active {
            return Err(AlarmError::InvalidState {
                alert_id: alert_id.to_string(),
                phase: self.phase,
            });
        }
        self.phase = Phase::Acknowledged;
        let mut ev = self.event(
            alert_id.to_string(),
            AlertKind::Acknowledged,
            at,
            self.last_seq.unwrap_or(0),
        );
        ev.operator = operator;
        Ok(ev)
    }
}
