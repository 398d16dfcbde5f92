//! HTTP facade over the engine for the operator console.
//!
//! Runs live in a data directory as journal files. The service resumes them
//! on startup, drives each one on its own engine thread, and exposes pending
//! fabrications, measurement submission and a server-sent event stream under
//! `/api/v1`.

pub mod api;
pub mod registry;

use std::future::Future;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

pub use api::router;
pub use registry::{Registry, RegistryError, RunHandle};

/// Serves `registry` on an already bound listener until `shutdown` resolves,
/// then closes every manual queue.
pub async fn serve_with(
    listener: tokio::net::TcpListener,
    registry: Arc<Registry>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(registry.clone());
    let result = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
    registry.shutdown();
    result
}

/// Opens `data_dir` and serves it on `bind` until Ctrl-C.
pub async fn serve(bind: SocketAddr, data_dir: &Path) -> Result<(), ServeError> {
    let registry = Arc::new(Registry::open(data_dir)?);
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|source| ServeError::Bind { addr: bind, source })?;
    serve_with(listener, registry, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
    .map_err(ServeError::Io)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Io(std::io::Error),
}
