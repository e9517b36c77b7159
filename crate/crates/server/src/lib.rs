//! HTTP service and command-line plumbing for the feedback platform.

pub mod api;
pub mod auth;
pub mod config;
pub mod demo;
pub mod error;
pub mod ops;

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use flipfeed_core::harness::Harness;
use flipfeed_core::store::Store;
use flipfeed_core::taskflow::TaskFlow;
use flipfeed_genai::GenAiClient;

pub use api::{router, AppState};
use auth::Auth;

#[derive(Debug)]
pub enum ServeError {
    MissingPack,
    Store(String),
    Bind(std::io::Error),
}

impl std::fmt::Display for ServeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ServeError::MissingPack => {
                f.write_str("no problem pack in the store; run `flipfeed ingest <pack-file>` (or `flipfeed seed-demo`) first")
            }
            ServeError::Store(m) => f.write_str(m),
            ServeError::Bind(e) => write!(f, "cannot bind: {e}"),
        }
    }
}

impl std::error::Error for ServeError {}

pub fn build_state(
    store: Arc<Store>,
    harness: Arc<Harness>,
    auth: Auth,
    endpoints_path: Option<PathBuf>,
    export_dir: PathBuf,
) -> Result<AppState, ServeError> {
    let pack = store.current_pack().map_err(|e| ServeError::Store(e.to_string()))?.ok_or(ServeError::MissingPack)?;
    Ok(AppState {
        flow: Arc::new(TaskFlow::new(store, harness)),
        pack: Arc::new(pack),
        auth,
        genai: GenAiClient::new(),
        endpoints_path,
        export_dir,
    })
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Resolves on SIGTERM or Ctrl-C.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    log::info!("shutting down");
}
