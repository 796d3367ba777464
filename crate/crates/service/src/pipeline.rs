//! The running service: polls cameras, runs detection, commits everything to
//! the event log, and fans alert events out to sinks.
//!
//! All mutations go through [`Service::commit`], which holds the store lock for
//! append + apply + broadcast so readers and subscribers see records in seq order.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::Serialize;
use smokewatch_core::{Detection, Image};
use thiserror::Error;
use tokio::sync::{broadcast, mpsc, Notify};

use crate::alerting::{dispatch, AlarmError, AlarmParams, AlertEvent, AlertKind, LogSink, Phase, Sink, WebhookSink};
use crate::clock::{Clock, SystemClock, Timestamp};
use crate::config::Config;
use crate::detector::{build_backend, BackendError, Detector, DetectorBackend};
use crate::ingest::{fetch_still, http_client, CameraConfig, CameraPatch, Frame, FrameQueue, PollStatus, Poller};
use crate::metrics::{Metrics, MetricsSnapshot};
use crate::store::{AckRecord, AlertRecord, AlertStatus, ApplyError, DetectionRecord, LatestFrame, LogRecord, Payload, Store, StoreError};

const EVENT_BUFFER: usize = 1024;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    InvalidState(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Rejected(ApplyError::Alarm(AlarmError::NotFound(id))) => {
                Self::NotFound(format!("alert {id} not found"))
            }
            StoreError::Rejected(ApplyError::Alarm(e @ AlarmError::InvalidState { .. })) => {
                Self::InvalidState(e.to_string())
            }
            StoreError::Rejected(ApplyError::UnknownCamera(id)) => {
                Self::NotFound(format!("camera {id} not found"))
            }
            other => Self::Store(other),
        }
    }
}

/// A camera as the API reports it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CameraView {
    #[serde(flatten)]
    pub config: CameraConfig,
    pub phase: Phase,
    pub active_alert_id: Option<String>,
    pub poll_status: Option<PollStatus>,
    pub latest_seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectResponse {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub model_id: String,
    pub latency_ms: f64,
    pub detections: Vec<Detection>,
}

struct Dispatcher {
    sinks: Arc<Vec<Arc<dyn Sink>>>,
    tx: Mutex<Option<mpsc::UnboundedSender<AlertEvent>>>,
    pending: Arc<AtomicUsize>,
    idle: Arc<Notify>,
}

impl Dispatcher {
    /// Events are delivered one at a time, in commit order.
    fn enqueue(&self, ev: AlertEvent, metrics: &Arc<Metrics>) {
        if self.sinks.is_empty() {
            return;
        }
        self.pending.fetch_add(1, Ordering::SeqCst);
        let mut tx = self.tx.lock();
        let sender = tx.get_or_insert_with(|| {
            let (tx, mut rx) = mpsc::unbounded_channel::<AlertEvent>();
            let (sinks, pending, idle, metrics) = (
                self.sinks.clone(),
                self.pending.clone(),
                self.idle.clone(),
                metrics.clone(),
            );
            tokio::spawn(async move {
                while let Some(ev) = rx.recv().await {
                    for r in dispatch(&ev, &sinks).await {
                        if r.delivered {
                            metrics.deliveries_ok.inc();
                        } else {
                            metrics.deliveries_failed.inc();
                        }
                    }
                    pending.fetch_sub(1, Ordering::SeqCst);
                    idle.notify_waiters();
                }
            });
            tx
        });
        if sender.send(ev).is_err() {
            self.pending.fetch_sub(1, Ordering::SeqCst);
        }
    }

    async fn wait_idle(&self) {
        loop {
            let n = self.idle.notified();
            if self.pending.load(Ordering::SeqCst) == 0 {
                return;
            }
            n.await;
        }
    }
}

pub struct ServiceBuilder {
    cfg: Config,
    clock: Arc<dyn Clock>,
    backend: Option<Arc<dyn DetectorBackend>>,
    sinks: Option<Vec<Arc<dyn Sink>>>,
    retry_delays: Option<Vec<Duration>>,
}

impl ServiceBuilder {
    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Replaces the backend the config would build.
    pub fn backend(mut self, backend: Arc<dyn DetectorBackend>) -> Self {
        self.backend = Some(backend);
        self
    }

    /// Replaces the sinks the config would build.
    pub fn sinks(mut self, sinks: Vec<Arc<dyn Sink>>) -> Self {
        self.sinks = Some(sinks);
        self
    }

    /// Retry schedule for configured webhooks.
    pub fn webhook_retry_delays(mut self, delays: Vec<Duration>) -> Self {
        self.retry_delays = Some(delays);
        self
    }

    pub fn open(self) -> Result<Arc<Service>, ServiceError> {
        let cfg = self.cfg;
        cfg.validate().map_err(ServiceError::Validation)?;
        let backend = match self.backend {
            Some(b) => b,
            None => build_backend(&cfg.detector)?,
        };
        let sinks = match self.sinks {
            Some(s) => s,
            None => {
                let mut s: Vec<Arc<dyn Sink>> = vec![Arc::new(LogSink::new(cfg.alert_log_path()))];
                for w in &cfg.alerting.webhooks {
                    let mut hook = WebhookSink::new(w.url.clone(), w.kinds.clone());
                    if let Some(d) = &self.retry_delays {
                        hook = hook.with_retry_delays(d.clone());
                    }
                    s.push(Arc::new(hook));
                }
                s
            }
        };
        let store = Store::open(&cfg.store.dir)?;
        let frame_dir = cfg.store.frame_dir();
        std::fs::create_dir_all(&frame_dir)
            .map_err(|e| ServiceError::Store(StoreError::Io { path: frame_dir.clone(), source: e }))?;

        let mut poller = Poller::new();
        for (id, alarm) in &store.state().alarms {
            let seq = alarm
                .last_seq
                .max(store.state().latest.get(id).map(|l| l.frame_seq));
            if let Some(seq) = seq {
                poller.set_last_seq(id, seq);
            }
        }
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        let svc = Arc::new(Service {
            clock: self.clock,
            store: Mutex::new(store),
            poller: Mutex::new(poller),
            queue: FrameQueue::new(cfg.server.queue_capacity),
            detector: Detector::new(backend, cfg.detector.clone()),
            dispatcher: Dispatcher {
                sinks: Arc::new(sinks),
                tx: Mutex::new(None),
                pending: Arc::new(AtomicUsize::new(0)),
                idle: Arc::new(Notify::new()),
            },
            http: http_client(),
            events,
            metrics: Arc::new(Metrics::default()),
            frame_dir,
            params: cfg.alerting.params(),
            drain: tokio::sync::Mutex::new(()),
            cfg,
        });
        // cameras from the config file seed the registry; the log wins afterwards
        for cam in svc.cfg.cameras.clone() {
            if !svc.store.lock().state().cameras.contains_key(&cam.id) {
                svc.commit(Payload::CameraConfig(cam))?;
            }
        }
        Ok(svc)
    }
}

pub struct Service {
    clock: Arc<dyn Clock>,
    store: Mutex<Store>,
    poller: Mutex<Poller>,
    queue: FrameQueue,
    detector: Detector,
    dispatcher: Dispatcher,
    http: reqwest::Client,
    events: broadcast::Sender<LogRecord>,
    metrics: Arc<Metrics>,
    frame_dir: PathBuf,
    params: AlarmParams,
    drain: tokio::sync::Mutex<()>,
    cfg: Config,
}

impl Service {
    pub fn builder(cfg: Config) -> ServiceBuilder {
        ServiceBuilder {
            cfg,
            clock: Arc::new(SystemClock),
            backend: None,
            sinks: None,
            retry_delays: None,
        }
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    /// Appends `payload`, applies it, broadcasts it, then logs and dispatches
    /// any alert events it caused.
    pub fn commit(&self, payload: Payload) -> Result<(LogRecord, Vec<AlertEvent>), ServiceError> {
        let started = Instant::now();
        let at = self.clock.now();
        let (rec, events) = {
            let mut store = self.store.lock();
            let (rec, events) = store.commit(at, payload)?;
            self.after_append(&store, &rec);
            for ev in &events {
                let (audit, _) = store.commit(at, Payload::Alert(ev.clone()))?;
                self.after_append(&store, &audit);
            }
            (rec, events)
        };
        self.metrics.commit_latency.record(started.elapsed());
        for ev in &events {
            match ev.kind {
                AlertKind::Raised => self.metrics.alerts_raised.inc(),
                AlertKind::Acknowledged => self.metrics.alerts_acknowledged.inc(),
                AlertKind::Cleared => self.metrics.alerts_cleared.inc(),
            }
            tracing::info!(alert = %ev.alert_id, camera = %ev.camera_id, kind = ev.kind.as_str(), "alert");
            self.dispatcher.enqueue(ev.clone(), &self.metrics);
        }
        Ok((rec, events))
    }

    fn after_append(&self, store: &Store, rec: &LogRecord) {
        self.metrics.records_logged.inc();
        let _ = self.events.send(rec.clone());
        let every = self.cfg.store.snapshot_every;
        if every > 0 && rec.seq.is_multiple_of(every) {
            if let Err(e) = store.snapshot() {
                tracing::warn!("snapshot failed: {e}");
            }
        }
    }

    /// Log records after `since` plus a receiver for everything newer. The two
    /// never overlap or leave a gap.
    pub fn subscribe(
        &self,
        since: u64,
    ) -> Result<(Vec<LogRecord>, broadcast::Receiver<LogRecord>), ServiceError> {
        let store = self.store.lock();
        let rx = self.events.subscribe();
        let backlog = store.records_since(since)?;
        Ok((backlog, rx))
    }

    pub fn last_seq(&self) -> u64 {
        self.store.lock().last_seq()
    }

    pub fn state(&self) -> crate::store::State {
        self.store.lock().state().clone()
    }

    pub fn log_path(&self) -> PathBuf {
        self.store.lock().log_path().to_path_buf()
    }

    pub fn snapshot(&self) -> Result<(), ServiceError> {
        self.store.lock().snapshot()?;
        Ok(())
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        self.metrics.snapshot()
    }

    pub fn cameras(&self) -> Vec<CameraView> {
        let store = self.store.lock();
        let poller = self.poller.lock();
        let st = store.state();
        st.cameras
            .values()
            .map(|c| {
                let alarm = st.alarms.get(&c.id);
                CameraView {
                    config: c.clone(),
                    phase: alarm.map_or(Phase::Idle, |a| a.phase),
                    active_alert_id: alarm.and_then(|a| a.active_alert_id.clone()),
                    poll_status: poller.status(&c.id).or(st.poll.get(&c.id)).cloned(),
                    latest_seq: st.latest.get(&c.id).map(|l| l.frame_seq),
                }
            })
            .collect()
    }

    pub fn camera(&self, id: &str) -> Result<CameraView, ServiceError> {
        self.cameras()
            .into_iter()
            .find(|c| c.config.id == id)
            .ok_or_else(|| ServiceError::NotFound(format!("camera {id} not found")))
    }

    pub fn add_camera(&self, cam: CameraConfig) -> Result<CameraView, ServiceError> {
        cam.validate().map_err(|e| ServiceError::Validation(e.to_string()))?;
        let id = cam.id.clone();
        self.commit_camera(cam, true)?;
        self.camera(&id)
    }

    fn commit_camera(&self, cam: CameraConfig, create: bool) -> Result<(), ServiceError> {
        let at = self.clock.now();
        let mut store = self.store.lock();
        let exists = store.state().cameras.contains_key(&cam.id);
        if create && exists {
            return Err(ServiceError::Conflict(format!("camera {} already exists", cam.id)));
        }
        if !create && !exists {
            return Err(ServiceError::NotFound(format!("camera {} not found", cam.id)));
        }
        let (rec, _) = store.commit(at, Payload::CameraConfig(cam))?;
        self.after_append(&store, &rec);
        Ok(())
    }

    pub fn patch_camera(&self, id: &str, patch: &CameraPatch) -> Result<CameraView, ServiceError> {
        let current = self
            .store
            .lock()
            .state()
            .cameras
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("camera {id} not found")))?;
        let next = current.apply(patch);
        next.validate().map_err(|e| ServiceError::Validation(e.to_string()))?;
        self.commit_camera(next, false)?;
        self.camera(id)
    }

    pub fn latest(&self, id: &str) -> Result<Option<LatestFrame>, ServiceError> {
        let store = self.store.lock();
        let st = store.state();
        if !st.cameras.contains_key(id) {
            return Err(ServiceError::NotFound(format!("camera {id} not found")));
        }
        Ok(st.latest.get(id).cloned())
    }

    pub fn frame_path(&self, id: &str) -> PathBuf {
        self.frame_dir.join(format!("{id}.jpg"))
    }

    /// Alerts ordered by raise time, then id.
    pub fn alerts(&self, active_only: bool) -> Vec<AlertRecord> {
        let store = self.store.lock();
        let mut v: Vec<AlertRecord> = store
            .state()
            .alerts
            .values()
            .filter(|a| !active_only || a.state == AlertStatus::Active)
            .cloned()
            .collect();
        v.sort_by(|a, b| a.raised_at.cmp(&b.raised_at).then_with(|| a.alert_id.cmp(&b.alert_id)));
        v
    }

    pub fn acknowledge(&self, alert_id: &str, operator: Option<String>) -> Result<AlertRecord, ServiceError> {
        self.commit(Payload::Ack(AckRecord {
            alert_id: alert_id.to_string(),
            operator,
        }))?;
        self.store
            .lock()
            .state()
            .alerts
            .get(alert_id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("alert {alert_id} not found")))
    }

    /// One-off detection on an uploaded image, no masks, default post-processing.
    pub async fn detect_bytes(&self, image_id: &str, bytes: &[u8]) -> Result<DetectResponse, ServiceError> {
        let img = Image::decode(bytes).map_err(|e| ServiceError::Validation(e.to_string()))?;
        let out = self.detector.run(image_id, &img, &[]).await?;
        self.metrics.detect_latency.record(out.elapsed);
        Ok(DetectResponse {
            image_id: image_id.to_string(),
            width: img.width(),
            height: img.height(),
            model_id: out.raw.model_id,
            latency_ms: out.elapsed.as_secs_f64() * 1000.0,
            detections: out.detections,
        })
    }

    /// Claims due cameras, registering any registry changes first.
    fn claim_due(&self) -> Vec<CameraConfig> {
        let now = self.clock.now();
        let store = self.store.lock();
        let mut poller = self.poller.lock();
        poller.sync(store.state().cameras.values(), now);
        poller.claim_due(now)
    }

    /// One scheduler step: fetch every due camera, then run every queued frame
    /// through detection. Returns once both are done.
    pub async fn tick(self: &Arc<Self>) {
        let due = self.claim_due();
        futures::future::join_all(due.into_iter().map(|c| self.poll_one(c))).await;
        self.process_pending().await;
    }

    async fn poll_one(&self, cam: CameraConfig) {
        let started = Instant::now();
        let res = fetch_still(&self.http, &cam.url).await;
        self.metrics.fetch_latency.record(started.elapsed());
        let now = self.clock.now();
        match res {
            Ok(image) => {
                self.metrics.frames_polled.inc();
                let (seq, recovered) = {
                    let mut p = self.poller.lock();
                    let was_failing = p.status(&cam.id).is_some_and(|s| s.consecutive_failures > 0);
                    let seq = p.complete_success(&cam.id, now);
                    (seq, was_failing.then(|| p.status(&cam.id).cloned()).flatten())
                };
                if let Some(status) = recovered {
                    self.commit_quietly(Payload::PollStatus(status));
                }
                let Some(seq) = seq else { return };
                let frame = Frame {
                    camera_id: cam.id.clone(),
                    seq,
                    fetched_at: now,
                    image,
                };
                if let Some(old) = self.queue.push(frame) {
                    self.metrics.frames_dropped.inc();
                    tracing::warn!(frame = %old.image_id(), "detector queue full, dropped frame");
                }
            }
            Err(f) => {
                self.metrics.poll_failures.inc();
                tracing::warn!(camera = %cam.id, "poll failed: {f}");
                let status = self.poller.lock().complete_failure(&cam.id, f, now);
                if let Some(status) = status {
                    self.commit_quietly(Payload::PollStatus(status));
                }
            }
        }
    }

    fn commit_quietly(&self, payload: Payload) {
        if let Err(e) = self.commit(payload) {
            tracing::error!("commit failed: {e}");
        }
    }

    /// Runs queued frames through detection until the queue is empty.
    pub async fn process_pending(&self) {
        let _one_drainer = self.drain.lock().await;
        loop {
            let batch = self.queue.pop_batch(16);
            if batch.is_empty() {
                return;
            }
            futures::future::join_all(batch.into_iter().map(|f| self.process_frame(f))).await;
        }
    }

    async fn process_frame(&self, frame: Frame) {
        let Some(cam) = self.store.lock().state().cameras.get(&frame.camera_id).cloned() else {
            return;
        };
        let image_id = frame.image_id();
        let out = match self.detector.run(&image_id, &frame.image, &cam.masks).await {
            Ok(o) => o,
            Err(e) => {
                self.metrics.detector_errors.inc();
                tracing::warn!(frame = %image_id, "detection failed: {e}");
                return;
            }
        };
        self.metrics.detect_latency.record(out.elapsed);
        self.metrics.frames_processed.inc();
        self.metrics.detections.add(out.detections.len() as u64);
        if let Err(e) = write_latest_frame(&self.frame_path(&cam.id), &frame.image) {
            tracing::warn!(camera = %cam.id, "could not cache latest frame: {e}");
        }
        self.commit_quietly(Payload::Detection(DetectionRecord {
            camera_id: cam.id.clone(),
            frame_seq: frame.seq,
            fetched_at: frame.fetched_at,
            width: frame.image.width(),
            height: frame.image.height(),
            model_id: out.raw.model_id,
            latency_ms: out.elapsed.as_secs_f64() * 1000.0,
            conf_threshold: cam.conf_threshold,
            params: self.params,
            detections: out.detections,
        }));
    }

    /// Waits until every alert event committed so far has been delivered (or
    /// has failed) on every sink.
    pub async fn wait_dispatch(&self) {
        self.dispatcher.wait_idle().await
    }

    /// Polls on a one-second tick and processes frames as they arrive, until
    /// `shutdown` resolves. A snapshot is written on the way out.
    pub async fn run(self: Arc<Self>, shutdown: impl std::future::Future<Output = ()>) {
        let scheduler = {
            let svc = self.clone();
            tokio::spawn(async move {
                let mut every = tokio::time::interval(Duration::from_secs(1));
                every.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
                loop {
                    every.tick().await;
                    for cam in svc.claim_due() {
                        let svc = svc.clone();
                        tokio::spawn(async move { svc.poll_one(cam).await });
                    }
                }
            })
        };
        let worker = {
            let svc = self.clone();
            tokio::spawn(async move {
                loop {
                    svc.queue.wait().await;
                    svc.process_pending().await;
                }
            })
        };
        shutdown.await;
        scheduler.abort();
        worker.abort();
        self.wait_dispatch().await;
        if let Err(e) = self.snapshot() {
            tracing::warn!("final snapshot failed: {e}");
        }
    }
}

fn write_latest_frame(path: &Path, img: &Image) -> std::io::Result<()> {
    let bytes = img
        .encode_jpeg()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let tmp = path.with_extension("jpg.tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}
