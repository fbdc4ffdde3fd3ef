//! HTTP service over a filesystem store: upload, analyze, review
//! corrections and agent questions.

pub mod api;
pub mod error;
pub mod store;

pub use api::{router, AppState};
pub use error::ServiceError;
pub use store::{Clock, Correction, CorrectionRequest, FixedClock, JobRecord, JobState, Pipeline, Store, SystemClock};

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
