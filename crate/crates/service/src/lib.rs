//! JSON-over-HTTP façade for the glucose digital twin.
//!
//! All endpoints live under `/api/v1`:
//!
//! | method | path | body / result |
//! |---|---|---|
//! | GET | `/`, `/health` | `{status, version}` |
//! | POST | `/datasets` | [`DatasetUpload`] → [`DatasetManifest`] |
//! | GET | `/datasets`, `/datasets/{id}` | manifests |
//! | POST | `/train` | [`TrainRequest`] → [`TrainResponse`] |
//! | GET | `/runs/{id}` | [`RunManifest`] |
//! | GET | `/runs/{id}/report[?format=csv]` | persisted report |
//! | GET | `/cgm/{id}/summary` | persisted CGM summary |
//! | POST | `/simulate` | [`SimulateRequest`] → [`SimulateResponse`] |
//! | POST | `/overlay` | [`OverlayRequest`] → [`OverlayResponse`] |
//! | GET | `/feasible-ranges` | slider bounds for scenario inputs |
//! | GET | `/reference-scenarios` | the bundled scenario triple |
//!
//! Errors are `{code, message, details?}` with `code` one of `bad_request`
//! (400), `not_found` (404), `validation_failed` (422) or `internal` (500).

mod api;
mod error;
pub mod workspace;

use std::net::SocketAddr;
use std::path::PathBuf;

use axum::Router;
use tower_http::services::{ServeDir, ServeFile};

pub use api::{
    api_routes, overlay_window, resolve_params, router, run_simulation, AppState, DatasetUpload,
    Health, OverlayRequest, OverlayResponse, SimulateRequest, SimulateResponse, SplitRequest,
    TrainRequest, TrainResponse, API_PREFIX,
};
pub use error::{ApiError, ErrorCode};
pub use workspace::{DatasetKind, DatasetManifest, RunManifest, RunStatus, Workspace, WorkspaceError};

/// The API router, plus the UI bundle at `/` when `static_dir` holds one.
pub fn app(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = router(state);
    match static_dir {
        Some(dir) if dir.join("index.html").is_file() => {
            let index = dir.join("index.html");
            api.fallback_service(ServeDir::new(dir).not_found_service(ServeFile::new(index)))
        }
        _ => api,
    }
}

/// Serves `app` until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await
}
