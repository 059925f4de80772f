//! `granttrend serve`: the HTTP API over the current snapshot.
//!
//! The catalog is loaded once at startup. `SIGHUP` reloads it from disk and
//! swaps it in without dropping connections; `SIGINT`/`SIGTERM` stop
//! accepting and drain in-flight requests.

use std::future::Future;
use std::io::Write;
use std::net::SocketAddr;
use std::sync::Arc;

use granttrend_core::api::http::{router, AppState};
use tokio::net::TcpListener;

use crate::commands::{CliError, DataDir};
use crate::config::Settings;

pub fn cmd_serve(settings: &Settings) -> Result<(), CliError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::env(format!("starting runtime: {e}")))?;
    runtime.block_on(async {
        let addr = SocketAddr::new(settings.bind, settings.port);
        let listener = TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::env(format!("binding {addr}: {e}")))?;
        serve(settings.clone(), listener, shutdown_signal()).await
    })
}

/// Serve on `listener` until `shutdown` resolves.
pub async fn serve(settings: Settings, listener: TcpListener, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), CliError> {
    let data = DataDir::new(&settings.data_dir);
    let catalog = {
        let (data, settings) = (data.clone(), settings.clone());
        tokio::task::spawn_blocking(move || data.catalog(&settings))
            .await
            .map_err(|e| CliError::env(e.to_string()))??
    };
    let state = AppState::new(catalog, settings.api_token.clone());
    spawn_reloader(Arc::clone(&state), data, settings);

    let local = listener.local_addr().map_err(|e| CliError::env(e.to_string()))?;
    println!("listening on http://{local}");
    let _ = std::io::stdout().flush();

    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| CliError::env(format!("server: {e}")))
}

#[cfg(unix)]
fn spawn_reloader(state: Arc<AppState>, data: DataDir, settings: Settings) {
    use tokio::signal::unix::{signal, SignalKind};

    let Ok(mut hup) = signal(SignalKind::hangup()) else {
        eprintln!("warning: SIGHUP reload unavailable");
        return;
    };
    tokio::spawn(async move {
        while hup.recv().await.is_some() {
            let (data, settings) = (data.clone(), settings.clone());
            match tokio::task::spawn_blocking(move || data.catalog(&settings)).await {
                Ok(Ok(catalog)) => {
                    state.swap(catalog);
                    eprintln!("reloaded catalog");
                }
                Ok(Err(e)) => eprintln!("reload failed, keeping previous catalog: {e}"),
                Err(e) => eprintln!("reload failed, keeping previous catalog: {e}"),
            }
        }
    });
}

#[cfg(not(unix))]
fn spawn_reloader(_state: Arc<AppState>, _data: DataDir, _settings: Settings) {}

async fn shutdown_signal() {
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
        _ = ctrl_c => {}
        _ = term => {}
    }
}
