#![allow(dead_code)]

use std::sync::Arc;

use convey::{app, AppState};
use convey_core::store::Store;

pub const MOBILE: &str = include_str!("../../../../corpus/mobile_banking.survey");

/// Serves the API on an ephemeral port; returns the base URL.
pub async fn spawn(store: Arc<dyn Store>) -> (String, tokio::task::JoinHandle<()>) {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = tokio::spawn(async move {
        axum::serve(listener, app(AppState::new(store)))
            .await
            .unwrap();
    });
    (format!("http://{addr}"), handle)
}

/// The mobile-banking script without its opening acknowledgement, so every
/// question is coded.
pub fn coded_mobile() -> String {
    MOBILE
        .lines()
        .filter(|l| !l.starts_with("{question} Are you ok") && !l.starts_with("{answer} Sure"))
        .map(|l| format!("{l}\n"))
        .collect()
}
