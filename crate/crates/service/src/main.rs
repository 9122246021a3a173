use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;
use dartsolve_core::cache::Cache;
use dartsolve_core::store::ModelStore;

#[derive(Parser)]
#[command(name = "dartsolve-service", version, about = "HTTP JSON API over a dartsolve model store")]
struct Args {
    /// Model store written by `dartsolve fit`.
    #[arg(long)]
    store: PathBuf,
    #[arg(long, env = "DARTSOLVE_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: std::net::IpAddr,
}

#[tokio::main]
async fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let store = match ModelStore::load(&args.store) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", args.store.display());
            std::process::exit(2);
        }
    };
    let cache = match Cache::from_env() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    };
    let app = dartsolve_service::router(dartsolve_service::AppState::new(store, cache));
    let addr = SocketAddr::new(args.bind, args.port);
    let listener = tokio::net::TcpListener::bind(addr).await.unwrap_or_else(|e| {
        eprintln!("error: cannot bind {addr}: {e}");
        std::process::exit(1);
    });
    log::info!("listening on {addr}");
    axum::serve(listener, app).await.expect("server error");
}
