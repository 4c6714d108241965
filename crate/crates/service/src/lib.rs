//! HTTP service and CLI around the document QA pipeline.

pub mod api;
pub mod app;
pub mod cli;
pub mod config;

use std::net::SocketAddr;

use tokio::net::TcpListener;
use tower_http::services::ServeDir;

pub use app::App;
pub use config::Config;

/// Full router: the API plus the static web client when configured.
pub fn build_router(app: App, config: &Config) -> axum::Router {
    let router = api::router(app);
    match &config.ui_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    }
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    config: Config,
    listener: TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    let app = App::new(&config)?;
    let _workers = app.start_workers(config.workers);
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!(%addr, library = %config.library.display(), "listening");
    axum::serve(listener, build_router(app, &config)).with_graceful_shutdown(shutdown).await?;
    Ok(())
}
