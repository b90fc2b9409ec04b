use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;
use log::info;
use survey_core::model_file::ModelFile;
use survey_service::{router, SessionStore};

#[derive(Debug, Parser)]
#[command(name = "survey-service", about = "Serve adaptive survey sessions over HTTP")]
struct Args {
    /// Model file written by `survey fit`.
    #[arg(long, env = "SURVEY_MODEL")]
    model: PathBuf,
    #[arg(long, env = "SURVEY_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Directory for session event logs and snapshots; in-memory when absent.
    #[arg(long, env = "SURVEY_DATA_DIR")]
    data_dir: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let model = ModelFile::load(&args.model)?;
    let store = match &args.data_dir {
        Some(dir) => SessionStore::open(model, dir)?,
        None => SessionStore::new(model),
    };
    let listener = tokio::net::TcpListener::bind(args.bind).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(store)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
