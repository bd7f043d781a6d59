use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use tiller_core::maestro::{MaestroConfig, ReadBeforeEditMode};
use tiller_core::model::{load_script, ModelDriver, ScriptedDriver};
use tiller_server::ServerConfig;

/// tiller backend: hosts tasks, executor connections and event streams.
#[derive(Parser, Debug)]
#[command(name = "tiller-server", version)]
struct Args {
    #[arg(long, env = "TILLER_BIND", default_value = "127.0.0.1:7878")]
    bind: String,
    /// Timelines and sessions are kept here; in memory when omitted.
    #[arg(long, env = "TILLER_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long, env = "TILLER_TOKEN")]
    token: Option<String>,
    /// Directory of `<name>.policy` files.
    #[arg(long, env = "TILLER_POLICY_DIR")]
    policy_dir: Option<PathBuf>,
    /// Script played back by the model driver for every task.
    #[arg(long)]
    script: PathBuf,
    #[arg(long, default_value_t = 50)]
    max_iterations: u32,
    #[arg(long, default_value = "warn")]
    read_before_edit: ReadBeforeEditMode,
    #[arg(long, default_value_t = 30)]
    ping_interval_secs: u64,
    #[arg(long, default_value_t = 20 * 60)]
    inactivity_timeout_secs: u64,
    #[arg(long, default_value_t = 24 * 60 * 60)]
    session_ttl_secs: u64,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let args = Args::parse();
    let script = load_script(&args.script)?;
    let config = ServerConfig {
        data_dir: args.data_dir,
        token: args.token,
        policy_dir: args.policy_dir,
        ping_interval: Duration::from_secs(args.ping_interval_secs),
        inactivity_timeout: Duration::from_secs(args.inactivity_timeout_secs),
        session_ttl: Duration::from_secs(args.session_ttl_secs),
        maestro: MaestroConfig {
            max_iterations: args.max_iterations,
            read_before_edit_mode: args.read_before_edit,
        },
    };
    let drivers = Arc::new(move |_: &str| -> Box<dyn ModelDriver> { Box::new(ScriptedDriver::new(script.clone())) });
    let listener = tokio::net::TcpListener::bind(&args.bind).await?;
    let server = tiller_server::start(config, drivers, listener).await?;
    tracing::info!("listening on {}", server.url());
    tokio::signal::ctrl_c().await?;
    server.stop().await;
    Ok(())
}
