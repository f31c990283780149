//! HTTP service for editing a session's rules and watching per-relation
//! metrics move.
//!
//! Every JSON response carries a `version`: the session's version for
//! session routes, the server-wide mutation counter otherwise.

mod api;
mod state;

use axum::routing::{get, post, put};
use axum::Router;
use tokio::net::TcpListener;

pub use api::ApiError;
pub use state::{AppState, StoreError};

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/relations", get(api::relations))
        .route("/sessions", get(api::list_sessions).post(api::create_session))
        .route("/sessions/{id}", get(api::get_session))
        .route("/sessions/{id}/rules", get(api::list_rules).post(api::add_rule))
        .route("/sessions/{id}/rules/{rid}", put(api::modify_rule).delete(api::delete_rule))
        .route("/sessions/{id}/overrides/{relation}", put(api::set_override))
        .route("/sessions/{id}/evaluate", post(api::evaluate))
        .route("/preview", post(api::preview_rule))
        .with_state(state)
}

/// Serves until the process is interrupted.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
