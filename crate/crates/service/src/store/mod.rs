//! Durable state: an append-only event log, a pure fold that materializes it,
//! and snapshots for fast start.
//!
//! Alarm transitions are not stored as facts. They are re-derived from detection
//! records during the fold, so live state and replayed state share one code path.
//! Alert records are written alongside for auditing and the event stream, and are
//! ignored by the fold.

mod log;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smokewatch_core::Detection;
use thiserror::Error;

use crate::alerting::{AlarmError, AlarmParams, AlarmState, AlertEvent, AlertKind, FrameObservation, Trigger};
use crate::clock::Timestamp;
use crate::ingest::{CameraConfig, PollStatus};

pub use log::{read_log, EventLog, LogRecord, TornTail};

pub const LOG_FILE: &str = "events.log";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

/// Post-processed output for one polled frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub camera_id: String,
    pub frame_seq: u64,
    pub fetched_at: Timestamp,
    pub width: u32,
    pub height: u32,
    pub model_id: String,
    pub latency_ms: f64,
    /// The camera threshold the observation was judged against.
    pub conf_threshold: f64,
    pub params: AlarmParams,
    /// Source-pixel boxes, descending confidence.
    pub detections: Vec<Detection>,
}

impl DetectionRecord {
    pub fn observation(&self) -> FrameObservation {
        FrameObservation::from_confidences(
            &self.camera_id,
            self.frame_seq,
            self.fetched_at,
            self.detections.iter().map(|d| d.confidence),
            self.conf_threshold,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AckRecord {
    pub alert_id: String,
    #[serde(default)]
    pub operator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Payload {
    Detection(DetectionRecord),
    Alert(AlertEvent),
    /// Full configuration after a create or update.
    CameraConfig(CameraConfig),
    Ack(AckRecord),
    PollStatus(PollStatus),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Detection(_) => "detection",
            Self::Alert(_) => "alert",
            Self::CameraConfig(_) => "camera_config",
            Self::Ack(_) => "ack",
            Self::PollStatus(_) => "poll_status",
        }
    }

    pub fn to_json(&self) -> String {
        let v = match self {
            Self::Detection(r) => serde_json::to_string(r),
            Self::Alert(r) => serde_json::to_string(r),
            Self::CameraConfig(r) => serde_json::to_string(r),
            Self::Ack(r) => serde_json::to_string(r),
            Self::PollStatus(r) => serde_json::to_string(r),
        };
        v.expect("payloads are always serializable")
    }

    pub fn from_json(kind: &str, json: &str) -> Result<Self, String> {
        let e = |e: serde_json::Error| format!("{kind} payload: {e}");
        Ok(match kind {
            "detection" => Self::Detection(serde_json::from_str(json).map_err(e)?),
            "alert" => Self::Alert(serde_json::from_str(json).map_err(e)?),
            "camera_config" => Self::CameraConfig(serde_json::from_str(json).map_err(e)?),
            "ack" => Self::Ack(serde_json::from_str(json).map_err(e)?),
            "poll_status" => Self::PollStatus(serde_json::from_str(json).map_err(e)?),
            other => return Err(format!("unknown record kind {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertStatus {
    Active,
    Acknowledged,
    Cleared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub alert_id: String,
    pub camera_id: String,
    pub state: AlertStatus,
    pub raised_at: Timestamp,
    pub frame_seq: u64,
    pub trigger: Trigger,
    pub acknowledged_at: Option<Timestamp>,
    pub operator: Option<String>,
    pub cleared_at: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatestFrame {
    pub camera_id: String,
    pub frame_seq: u64,
    pub fetched_at: Timestamp,
    pub width: u32,
    pub height: u32,
    pub model_id: String,
    pub latency_ms: f64,
    pub positive: bool,
    pub max_confidence: f64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApplyError {
    #[error("record seq {got} does not follow {expected}")]
    Sequence { expected: u64, got: u64 },
    #[error("unknown camera {0}")]
    UnknownCamera(String),
    #[error(transparent)]
    Alarm(#[from] AlarmError),
}

/// Everything the log materializes to.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub last_seq: u64,
    pub cameras: BTreeMap<String, CameraConfig>,
    pub alarms: BTreeMap<String, AlarmState>,
    pub alerts: BTreeMap<String, AlertRecord>,
    pub poll: BTreeMap<String, PollStatus>,
    pub latest: BTreeMap<String, LatestFrame>,
}

impl State {
    /// Folds one record in. Returns the alert events the record implies.
    pub fn apply(&mut self, rec: &LogRecord) -> Result<Vec<AlertEvent>, ApplyError> {
        if rec.seq != self.last_seq + 1 {
            return Err(ApplyError::Sequence {
                expected: self.last_seq + 1,
                got: rec.seq,
            });
        }
        let events = match &rec.payload {
            Payload::Detection(d) => {
                if !self.cameras.contains_key(&d.camera_id) {
                    return Err(ApplyError::UnknownCamera(d.camera_id.clone()));
                }
                let obs = d.observation();
                let alarm = self
                    .alarms
                    .entry(d.camera_id.clone())
                    .or_insert_with(|| AlarmState::new(&d.camera_id));
                let events = alarm.update(&obs, &d.params)?;
                self.latest.insert(
                    d.camera_id.clone(),
                    LatestFrame {
                        camera_id: d.camera_id.clone(),
                        frame_seq: d.frame_seq,
                        fetched_at: d.fetched_at,
                        width: d.width,
                        height: d.height,
                        model_id: d.model_id.clone(),
                        latency_ms: d.latency_ms,
                        positive: obs.positive,
                        max_confidence: obs.max_confidence,
                        detections: d.detections.clone(),
                    },
                );
                events
            }
            Payload::Alert(_) => Vec::new(),
            Payload::CameraConfig(c) => {
                self.cameras.insert(c.id.clone(), c.clone());
                self.alarms
                    .entry(c.id.clone())
                    .or_insert_with(|| AlarmState::new(&c.id));
                Vec::new()
            }
            Payload::Ack(a) => vec![self.acknowledge(a, rec.at)?],
            Payload::PollStatus(p) => {
                self.poll.insert(p.camera_id.clone(), p.clone());
                Vec::new()
            }
        };
        for e in &events {
            self.register(e);
        }
        self.last_seq = rec.seq;
        Ok(events)
    }

    fn acknowledge(&mut self, a: &AckRecord, at: Timestamp) -> Result<AlertEvent, ApplyError> {
        let Some(alert) = self.alerts.get(&a.alert_id) else {
            return Err(AlarmError::NotFound(a.alert_id.clone()).into());
        };
        let alarm = self
            .alarms
            .get_mut(&alert.camera_id)
            .ok_or_else(|| ApplyError::UnknownCamera(alert.camera_id.clone()))?;
        if alert.state != AlertStatus::Active {
            return Err(AlarmError::InvalidState {
                alert_id: a.alert_id.clone(),
                phase: alarm.phase,
            }
            .into());
        }
        Ok(alarm.acknowledge(&a.alert_id, a.operator.clone(), at)?)
    }

    fn register(&mut self, e: &AlertEvent) {
        match e.kind {
            AlertKind::Raised => {
                self.alerts.insert(
                    e.alert_id.clone(),
                    AlertRecord {
                        alert_id: e.alert_id.clone(),
                        camera_id: e.camera_id.clone(),
                        state: AlertStatus::Active,
                        raised_at: e.at,
                        frame_seq: e.frame_seq,
                        trigger: e.trigger,
                        acknowledged_at: None,
                        operator: None,
                        cleared_at: None,
                    },
                );
            }
            AlertKind::Acknowledged => {
                if let Some(r) = self.alerts.get_mut(&e.alert_id) {
                    r.state = AlertStatus::Acknowledged;
                    r.acknowledged_at = Some(e.at);
                    r.operator = e.operator.clone();
                }
            }
            AlertKind::Cleared => {
                if let Some(r) = self.alerts.get_mut(&e.alert_id) {
                    r.state = AlertStatus::Cleared;
                    r.cleared_at = Some(e.at);
                }
            }
        }
    }

    /// Folds a whole log.
    pub fn replay<'a>(records: impl IntoIterator<Item = &'a LogRecord>) -> Result<Self, StoreError> {
        let mut s = Self::default();
        for r in records {
            s.apply(r).map_err(|e| StoreError::Integrity {
                seq: Some(r.seq),
                reason: e.to_string(),
            })?;
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub as_of_seq: u64,
    pub state: State,
}

impl Snapshot {
    pub fn write(&self, path: &Path) -> Result<(), StoreError> {
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_vec(self).expect("state is serializable");
        std::fs::write(&tmp, body).map_err(|e| StoreError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| StoreError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Option<Self>, StoreError> {
        match std::fs::read(path) {
            Ok(b) => serde_json::from_slice(&b)
                .map(Some)
                .map_err(|e| StoreError::Snapshot(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(StoreError::io(path, e)),
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("event log integrity error{}: {reason}", seq.map(|s| format!(" at seq {s}")).unwrap_or_default())]
    Integrity { seq: Option<u64>, reason: String },
    #[error("snapshot at seq {snapshot} is newer than the log (last seq {log})")]
    SnapshotMismatch { snapshot: u64, log: u64 },
    #[error("unreadable snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Rejected(#[from] ApplyError),
}

impl StoreError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// The log, its materialized state, and the snapshot beside it.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    log: EventLog,
    state: State,
}

impl Store {
    /// Loads the snapshot if present and replays the log tail onto it.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
        let (log, records) = EventLog::open(&dir.join(LOG_FILE))?;
        let mut state = match Snapshot::read(&dir.join(SNAPSHOT_FILE))? {
            Some(s) if s.as_of_seq > log.last_seq() => {
                return Err(StoreError::SnapshotMismatch {
                    snapshot: s.as_of_seq,
                    log: log.last_seq(),
                })
            }
            Some(s) => s.state,
            None => State::default(),
        };
        let base = state.last_seq;
        for r in records.iter().filter(|r| r.seq > base) {
            state.apply(r).map_err(|e| StoreError::Integrity {
                seq: Some(r.seq),
                reason: e.to_string(),
            })?;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            log,
            state,
        })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn last_seq(&self) -> u64 {
        self.log.last_seq()
    }

    pub fn log_path(&self) -> &Path {
        self.log.path()
    }

    /// Validates `payload` against the current state, appends it, then applies
    /// it. A rejected payload leaves both log and state untouched.
    pub fn commit(
        &mut self,
        at: Timestamp,
        payload: Payload,
    ) -> Result<(LogRecord, Vec<AlertEvent>), StoreError> {
        let mut next = self.state.clone();
        let probe = LogRecord {
            seq: self.log.last_seq() + 1,
            at,
            payload,
        };
        let events = next.apply(&probe)?;
        let rec = self.log.append(at, probe.payload)?;
        self.state = next;
        Ok((rec, events))
    }

    pub fn snapshot(&self) -> Result<Snapshot, StoreError> {
        let snap = Snapshot {
            as_of_seq: self.state.last_seq,
            state: self.state.clone(),
        };
        snap.write(&self.dir.join(SNAPSHOT_FILE))?;
        Ok(snap)
    }

    /// Records with seq greater than `after`, read back from disk.
    pub fn records_since(&self, after: u64) -> Result<Vec<LogRecord>, StoreError> {
        let (records, _) = read_log(self.log.path())?;
        Ok(records.into_iter().filter(|r| r.seq > after).collect())
    }
}
