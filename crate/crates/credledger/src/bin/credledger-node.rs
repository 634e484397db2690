//! CredLedger node daemon.
//!
//! Exit codes: 0 clean shutdown, 2 configuration error, 3 corrupt ledger,
//! snapshot mismatch or other startup failure.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use parking_lot::RwLock;
use tracing::{error, info, warn};

use credledger::server;
use credledger_core::identity::Address;
use credledger_core::node::{DEFAULT_LISTEN, DEFAULT_MAX_CLOCK_SKEW, DEFAULT_SNAPSHOT_EVERY};
use credledger_core::{Node, NodeConfig, NodeError};

#[derive(Parser)]
#[command(name = "credledger-node", version, about = "CredLedger ledger node")]
struct Args {
    #[arg(long, env = "CREDLEDGER_DATA_DIR")]
    data_dir: PathBuf,
    #[arg(long, env = "CREDLEDGER_LISTEN", default_value = DEFAULT_LISTEN)]
    listen: String,
    /// Key used to sign verification reports.
    #[arg(long, env = "CREDLEDGER_SIGNING_KEY")]
    signing_key: Option<PathBuf>,
    /// Government address; required the first time a data dir is used.
    #[arg(long, env = "CREDLEDGER_GOVERNMENT")]
    government: Option<Address>,
    /// Transactions per block.
    #[arg(long, env = "CREDLEDGER_BLOCK_INTERVAL", default_value_t = 1)]
    block_interval: usize,
    /// Seconds a transaction timestamp may differ from node time.
    #[arg(long, env = "CREDLEDGER_MAX_CLOCK_SKEW", default_value_t = DEFAULT_MAX_CLOCK_SKEW)]
    max_clock_skew: u64,
    /// Blocks between state snapshots; 0 disables periodic snapshots.
    #[arg(long, env = "CREDLEDGER_SNAPSHOT_EVERY", default_value_t = DEFAULT_SNAPSHOT_EVERY)]
    snapshot_every: u64,
}

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
    info!("shutdown requested");
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    let config = NodeConfig {
        listen: args.listen,
        data_dir: args.data_dir,
        block_interval: args.block_interval,
        signing_key: args.signing_key,
        government: args.government,
        max_clock_skew: args.max_clock_skew,
        snapshot_every: args.snapshot_every,
    };

    let node = match Node::boot(config.clone()) {
        Ok(n) => n,
        Err(e) => {
            error!(code = e.code(), "boot failed: {e}");
            return match e {
                NodeError::ConfigInvalid(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            };
        }
    };
    let head = node.head();
    info!(height = ?head.height, data_dir = %config.data_dir.display(), "ledger loaded");
    let node = Arc::new(RwLock::new(node));

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            error!("runtime: {e}");
            return ExitCode::from(3);
        }
    };
    let served = runtime.block_on(async {
        let listener = match tokio::net::TcpListener::bind(&config.listen).await {
            Ok(l) => l,
            Err(e) => {
                error!("cannot listen on {}: {e}", config.listen);
                return Err(ExitCode::from(2));
            }
        };
        if let Ok(addr) = listener.local_addr() {
            info!(%addr, "listening");
        }
        server::serve(listener, node.clone(), shutdown_signal())
            .await
            .map_err(|e| {
                error!("server: {e}");
                ExitCode::from(3)
            })
    });

    if let Err(e) = node.read().snapshot() {
        warn!("final snapshot failed: {e}");
    }
    match served {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
