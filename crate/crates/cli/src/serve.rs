use std::path::Path;

use smokewatch_service::config::LoadError;
use smokewatch_service::{api, Config, Service};

use crate::output::Failure;

pub fn run(config: &Path) -> Result<(), Failure> {
    let cfg = Config::load(config).map_err(|e| match e {
        LoadError::Io { .. } => Failure::usage(format!("cannot read config {e}\n\nUsage: smokewatch serve --config <CONFIG>")),
        other => Failure::usage(other),
    })?;
    let rt = tokio::runtime::Runtime::new().map_err(Failure::runtime)?;
    rt.block_on(async move {
        let addr = format!("{}:{}", cfg.server.host, cfg.server.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Failure::runtime(format!("cannot listen on {addr}: {e}")))?;
        let svc = Service::builder(cfg).open().map_err(Failure::runtime)?;
        let local = listener.local_addr().map_err(Failure::runtime)?;
        tracing::info!(port = local.port(), "listening on http://{local}");

        let (tx, rx) = tokio::sync::watch::channel(false);
        let stop = |mut rx: tokio::sync::watch::Receiver<bool>| async move {
            let _ = rx.wait_for(|v| *v).await;
        };
        let worker = tokio::spawn(svc.clone().run(stop(rx.clone())));
        let http = tokio::spawn(api::serve(svc, listener, stop(rx)));
        let _ = tokio::signal::ctrl_c().await;
        tracing::info!("shutting down");
        let _ = tx.send(true);
        let served = http.await.map_err(Failure::runtime)?;
        worker.await.map_err(Failure::runtime)?;
        served.map_err(Failure::runtime)
    })
}
