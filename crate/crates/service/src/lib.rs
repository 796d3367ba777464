//! Smoke early-warning service: camera ingest, detector boundary, alarm
//! debouncing, durable event log and HTTP API.

pub mod alerting;
pub mod api;
pub mod clock;
pub mod config;
pub mod detector;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod store;

pub use config::Config;
pub use pipeline::{Service, ServiceBuilder, ServiceError};
