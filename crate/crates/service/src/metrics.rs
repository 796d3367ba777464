//! Operational counters. All values only ever increase.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::Serialize;

#[derive(Debug, Default)]
pub struct Counter(AtomicU64);

impl Counter {
    pub fn inc(&self) {
        self.add(1);
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Running total and count of one stage's latency, in microseconds.
#[derive(Debug, Default)]
pub struct Latency {
    count: Counter,
    total_us: Counter,
    max_us: AtomicU64,
}

impl Latency {
    pub fn record(&self, d: Duration) {
        let us = u64::try_from(d.as_micros()).unwrap_or(u64::MAX);
        self.count.inc();
        self.total_us.add(us);
        self.max_us.fetch_max(us, Ordering::Relaxed);
    }

    fn snapshot(&self) -> LatencySnapshot {
        LatencySnapshot {
            count: self.count.get(),
            total_us: self.total_us.get(),
            max_us: self.max_us.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Default)]
pub struct Metrics {
    pub frames_polled: Counter,
    pub poll_failures: Counter,
    pub frames_dropped: Counter,
    pub frames_processed: Counter,
    pub detector_errors: Counter,
    pub detections: Counter,
    pub alerts_raised: Counter,
    pub alerts_acknowledged: Counter,
    pub alerts_cleared: Counter,
    pub deliveries_ok: Counter,
    pub deliveries_failed: Counter,
    pub records_logged: Counter,
    pub fetch_latency: Latency,
    pub detect_latency: Latency,
    pub commit_latency: Latency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LatencySnapshot {
    pub count: u64,
    pub total_us: u64,
    pub max_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetricsSnapshot {
    pub frames_polled: u64,
    pub poll_failures: u64,
    pub frames_dropped: u64,
    pub frames_processed: u64,
    pub detector_errors: u64,
    pub detections: u64,
    pub alerts_raised: u64,
    pub alerts_acknowledged: u64,
    pub alerts_cleared: u64,
    pub deliveries_ok: u64,
    pub deliveries_failed: u64,
    pub records_logged: u64,
    pub fetch_latency: LatencySnapshot,
    pub detect_latency: LatencySnapshot,
    pub commit_latency: LatencySnapshot,
}

impl Metrics {
    pub fn snapshot(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            frames_polled: self.frames_polled.get(),
            poll_failures: self.poll_failures.get(),
            frames_dropped: self.frames_dropped.get(),
            frames_processed: self.frames_processed.get(),
            detector_errors: self.detector_errors.get(),
            detections: self.detections.get(),
            alerts_raised: self.alerts_raised.get(),
            alerts_acknowledged: self.alerts_acknowledged.get(),
            alerts_cleared: self.alerts_cleared.get(),
            deliveries_ok: self.deliveries_ok.get(),
            deliveries_failed: self.deliveries_failed.get(),
            records_logged: self.records_logged.get(),
            fetch_latency: self.fetch_latency.snapshot(),
            detect_latency: self.detect_latency.snapshot(),
            commit_latency: self.commit_latency.snapshot(),
        }
    }
}

impl MetricsSnapshot {
    /// `name value` lines, one per counter.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let counters = [
            ("frames_polled", self.frames_polled),
            ("poll_failures", self.poll_failures),
            ("frames_dropped", self.frames_dropped),
            ("frames_processed", self.frames_processed),
            ("detector_errors", self.detector_errors),
            ("detections", self.detections),
            ("alerts_raised", self.alerts_raised),
            ("alerts_acknowledged", self.alerts_acknowledged),
            ("alerts_cleared", self.alerts_cleared),
            ("deliveries_ok", self.deliveries_ok),
            ("deliveries_failed", self.deliveries_failed),
            ("records_logged", self.records_logged),
        ];
        for (name, v) in counters {
            let _ = writeln!(out, "smokewatch_{name} {v}");
        }
        for (stage, l) in [
            ("fetch", self.fetch_latency),
            ("detect", self.detect_latency),
            ("commit", self.commit_latency),
        ] {
            let _ = writeln!(out, "smokewatch_{stage}_latency_count {}", l.count);
            let _ = writeln!(out, "smokewatch_{stage}_latency_total_us {}", l.total_us);
            let _ = writeln!(out, "smokewatch_{stage}_latency_max_us {}", l.max_us);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_metrics_are_zero() {
        let text = Metrics::default().snapshot().render_text();
        assert!(text.lines().all(|l| l.ends_with(" 0")), "{text}");
    }

    #[test]
    fn latency_accumulates() {
        let m = Metrics::default();
        m.detect_latency.record(Duration::from_micros(10));
        m.detect_latency.record(Duration::from_micros(30));
        let s = m.snapshot().detect_latency;
        assert_eq!((s.count, s.total_us, s.max_us), (2, 40, 30));
    }
}
