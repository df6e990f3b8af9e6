use std::path::PathBuf;

use clap::{Parser, Subcommand};
use tryon_service::config::ServiceConfig;
use tryon_service::{router, AppState};

#[derive(Parser)]
#[command(name = "tryon-service", about = "Virtual try-on HTTP service")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve the API. `TRYON_*` environment variables override the file.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    acdg::telemetry::init();
    let Cmd::Serve { config } = Cli::parse().cmd;
    let config = ServiceConfig::load(config.as_deref())?;
    let addr = format!("{}:{}", config.host, config.port);
    let state = AppState::new(config)?;
    tracing::info!(avatars = state.catalog.avatars.len(), garments = state.catalog.garments.len(), %addr, "listening");
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
