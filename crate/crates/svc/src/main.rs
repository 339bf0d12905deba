use std::net::SocketAddr;
use std::path::PathBuf;

use axum::http::HeaderValue;
use clap::Parser;
use qpcm_svc::{router, AppState, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "qpcm-svc", version, about = "Serve pair datasets for interactive aperture rendering")]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8077")]
    bind: SocketAddr,
    /// Resident pair-table budget in MiB.
    #[arg(long, default_value_t = 4096)]
    memory_budget_mb: usize,
    /// Allowed CORS origin; repeat for several. Any origin when omitted.
    #[arg(long)]
    cors_origin: Vec<String>,
    /// Pair files to register at startup.
    #[arg(long)]
    preload: Vec<PathBuf>,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args = Args::parse();
    let cors_origins = args.cors_origin.iter().map(|o| HeaderValue::from_str(o)).collect::<Result<Vec<_>, _>>()?;
    let state = AppState::new(ServiceConfig { memory_budget: args.memory_budget_mb << 20, cors_origins });
    for p in args.preload {
        match state.register_path(p.clone()).await {
            Ok(ds) => eprintln!("loaded {} as {} ({} pairs)", p.display(), ds.info.id, ds.info.pairs),
            Err(e) => return Err(format!("{}: {} ({})", p.display(), e.message, e.category).into()),
        }
    }
    let listener = tokio::net::TcpListener::bind(args.bind).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
