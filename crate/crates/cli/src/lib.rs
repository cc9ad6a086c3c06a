//! HTTP service around [`smstriage_core::Engine`] and blocking clients for
//! driving it from the command line.

pub mod client;
pub mod config;
pub mod server;

use std::net::SocketAddr;
use std::sync::Arc;

use smstriage_core::clock::SystemClock;
use smstriage_core::{Engine, EngineConfig, ExecutionMode, Result};
use tokio::net::TcpListener;

use crate::config::ServiceConfig;

pub fn engine_config(config: &ServiceConfig) -> EngineConfig {
    EngineConfig {
        data_dir: config.data_dir.clone(),
        default_char_limit: config.default_char_limit,
        lease: chrono_secs(config.lease_secs),
        discard_cooldown: config.discard_cooldown_secs.map(chrono_secs),
        fsync: config.fsync,
        mode: ExecutionMode::Background,
        token_seed: None,
    }
}

fn chrono_secs(s: i64) -> chrono::Duration {
    chrono::Duration::seconds(s)
}

/// A running server bound to a local port, used by tests and `serve`.
pub struct RunningServer {
    pub addr: SocketAddr,
    pub engine: Arc<Engine>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl RunningServer {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Starts the engine's workers and serves HTTP on a background thread.
pub fn spawn(engine: Arc<Engine>, listen: SocketAddr) -> Result<RunningServer> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    let listener = runtime.block_on(TcpListener::bind(listen))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let app = server::router(Arc::clone(&engine));
    let workers_engine = Arc::clone(&engine);
    let thread = std::thread::Builder::new()
        .name("http".into())
        .spawn(move || {
            let _workers = workers_engine.start();
            runtime.block_on(async move {
                let serve = axum::serve(listener, app).with_graceful_shutdown(async {
                    let _ = rx.await;
                });
                if let Err(e) = serve.await {
                    tracing::error!(error = %e, "server stopped");
                }
            });
        })?;
    Ok(RunningServer {
        addr,
        engine,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Runs the service until Ctrl-C.
pub fn serve(config: &ServiceConfig) -> Result<()> {
    let engine = Arc::new(Engine::open(engine_config(config), Arc::new(SystemClock))?);
    let server = spawn(engine, config.listen)?;
    tracing::info!(addr = %server.addr, data_dir = ?config.data_dir, "listening");
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()?;
    runtime.block_on(tokio::signal::ctrl_c())?;
    tracing::info!("shutting down");
    drop(server);
    Ok(())
}
