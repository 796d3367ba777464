//! Localhost stub servers and service scaffolding shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use parking_lot::Mutex;
use smokewatch_core::Image;
use smokewatch_service::clock::SimClock;
use smokewatch_service::config::Config;
use smokewatch_service::detector::wire::{decode_request, encode_response, InferResponse, WireDetection};
use smokewatch_service::detector::{MockBackend, MockFixture};
use smokewatch_service::ingest::CameraConfig;
use smokewatch_service::Service;

/// Serves `router` on an ephemeral localhost port and returns its base URL.
pub async fn spawn(router: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, router).await.unwrap();
    });
    format!("http://{addr}")
}

/// Reply the stub camera gives to one request.
#[derive(Debug, Clone)]
pub enum Still {
    Png(Vec<u8>),
    Status(u16),
    Html,
}

/// A 64x48 PNG whose pixels encode `n`, so every frame differs.
pub fn numbered_png(n: u32) -> Vec<u8> {
    let mut img = Image::filled(64, 48, [(n % 256) as u8, 90, 40]).unwrap();
    img.put_pixel(0, 0, [(n / 256) as u8, 0, 0]);
    img.encode_png().unwrap()
}

#[derive(Default)]
pub struct CameraStub {
    /// Scripted replies; once empty, successive numbered frames are served.
    pub script: Mutex<VecDeque<Still>>,
    pub served: Mutex<u32>,
    pub requests: Mutex<Vec<Option<String>>>,
}

async fn still(State(cam): State<Arc<CameraStub>>, headers: axum::http::HeaderMap) -> Response {
    cam.requests.lock().push(
        headers
            .get(header::USER_AGENT)
            .and_then(|v| v.to_str().ok())
            .map(String::from),
    );
    let next = cam.script.lock().pop_front();
    match next {
        Some(Still::Png(b)) => ([(header::CONTENT_TYPE, "image/png")], b).into_response(),
        Some(Still::Status(s)) => StatusCode::from_u16(s).unwrap().into_response(),
        Some(Still::Html) => ([(header::CONTENT_TYPE, "text/html")], "<html>oops</html>").into_response(),
        None => {
            let n = {
                let mut s = cam.served.lock();
                *s += 1;
                *s
            };
            ([(header::CONTENT_TYPE, "image/png")], numbered_png(n)).into_response()
        }
    }
}

/// Camera at `<base>/still.png`, plus `<base>/moved` redirecting to it.
pub async fn camera_stub() -> (String, Arc<CameraStub>) {
    let cam = Arc::new(CameraStub::default());
    let router = Router::new()
        .route("/still.png", get(still))
        .route(
            "/moved",
            get(|| async { (StatusCode::FOUND, [(header::LOCATION, "/still.png")]) }),
        )
        .with_state(cam.clone());
    let base = spawn(router).await;
    (format!("{base}/still.png"), cam)
}

#[derive(Default)]
pub struct WebhookStub {
    pub bodies: Mutex<Vec<serde_json::Value>>,
    /// Requests still to fail with 503 before accepting.
    pub fail_next: Mutex<usize>,
    pub attempts: Mutex<usize>,
}

impl WebhookStub {
    pub fn kinds(&self) -> Vec<String> {
        self.bodies
            .lock()
            .iter()
            .map(|b| b["kind"].as_str().unwrap().to_string())
            .collect()
    }
}

async fn hook(State(h): State<Arc<WebhookStub>>, body: Bytes) -> StatusCode {
    *h.attempts.lock() += 1;
    {
        let mut f = h.fail_next.lock();
        if *f > 0 {
            *f -= 1;
            return StatusCode::SERVICE_UNAVAILABLE;
        }
    }
    h.bodies.lock().push(serde_json::from_slice(&body).unwrap());
    StatusCode::OK
}

pub async fn webhook_stub() -> (String, Arc<WebhookStub>) {
    let h = Arc::new(WebhookStub::default());
    let router = Router::new().route("/hook", post(hook)).with_state(h.clone());
    (format!("{}/hook", spawn(router).await), h)
}

/// Model server answering every request with `detections`.
pub async fn model_stub(detections: Vec<WireDetection>) -> String {
    let router = Router::new().route(
        "/infer",
        post(move |body: Bytes| {
            let detections = detections.clone();
            async move {
                match decode_request(&body) {
                    Ok(_) => encode_response(&InferResponse {
                        model_id: "stub-yolo".into(),
                        detections,
                        latency_ms: 4.5,
                    })
                    .into_response(),
                    Err(e) => (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
                }
            }
        }),
    );
    spawn(router).await
}

pub fn camera(id: &str, url: &str) -> CameraConfig {
    CameraConfig {
        id: id.into(),
        name: format!("camera {id}"),
        url: url.into(),
        poll_interval: 30,
        conf_threshold: 0.298,
        masks: vec![],
        enabled: true,
    }
}

pub fn config(store_dir: &Path, cameras: Vec<CameraConfig>) -> Config {
    let mut cfg = Config::default();
    cfg.store.dir = store_dir.to_path_buf();
    cfg.cameras = cameras;
    cfg
}

/// Mock fixture where the listed frames of `camera` carry one 0.9 detection.
pub fn positive_frames(camera: &str, frames: impl IntoIterator<Item = u64>) -> MockFixture {
    let records = frames
        .into_iter()
        .map(|n| {
            serde_json::json!({
                "image_id": format!("{camera}/{n:06}"),
                "detections": [{"x1": 8, "y1": 6, "x2": 40, "y2": 30, "class_id": 0, "confidence": 0.9}]
            })
        })
        .collect::<Vec<_>>();
    MockFixture::parse(&serde_json::json!({ "model_id": "mock-smoke", "records": records }).to_string())
        .unwrap()
}

pub fn open_service(cfg: Config, clock: &SimClock, fixture: MockFixture) -> Arc<Service> {
    let input = cfg.detector.input_side;
    Service::builder(cfg)
        .clock(Arc::new(clock.clone()))
        .backend(Arc::new(MockBackend::new(fixture, input)))
        .webhook_retry_delays(vec![std::time::Duration::from_millis(10); 3])
        .open()
        .unwrap()
}

/// Starts the HTTP API for `svc` and returns its base URL.
pub async fn serve_api(svc: Arc<Service>) -> String {
    spawn(smokewatch_service::api::router(svc)).await
}
