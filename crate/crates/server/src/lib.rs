//! Backend service for tiller: task endpoints, the executor WebSocket, the
//! read-only event stream, inactivity sweeping and restart recovery.

mod config;
mod executor;
mod http;
mod hub;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use tiller_core::model::DriverFactory;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub use config::{PolicyDir, PolicyLookupError, ServerConfig, DEFAULT_POLICY};
pub use http::{router, ACTIONS};
pub use hub::{Action, ActionError, AttachError, CreateError, CreateTask, Hub, NotifyLog, TaskSlot};

/// A server bound to a socket, with its sweeper.
pub struct RunningServer {
    pub addr: SocketAddr,
    pub hub: Arc<Hub>,
    serve: JoinHandle<()>,
    sweeper: JoinHandle<()>,
}

impl RunningServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Hard stop: executors are disconnected and the listener goes away.
    pub async fn stop(self) {
        self.hub.close_all();
        self.sweeper.abort();
        self.serve.abort();
        let _ = self.serve.await;
        // let session tasks observe the disconnect and park
        tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    }
}

fn spawn_sweeper(hub: Arc<Hub>) -> JoinHandle<()> {
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(hub.config().sweep_interval());
        loop {
            ticker.tick().await;
            for task_id in hub.inactivity_sweep(Instant::now()) {
                tracing::info!(%task_id, "dropped idle executor session");
            }
        }
    })
}

/// Opens storage, recovers tasks and starts serving on `listener`.
pub async fn start(config: ServerConfig, drivers: Arc<dyn DriverFactory>, listener: TcpListener) -> anyhow::Result<RunningServer> {
    let hub = Hub::open(config, drivers)?;
    let addr = listener.local_addr()?;
    let app = router(hub.clone());
    let serve = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok(RunningServer {
        addr,
        sweeper: spawn_sweeper(hub.clone()),
        hub,
        serve,
    })
}
