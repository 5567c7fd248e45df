//! HTTP front end for [`ScoringService`].

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::{oneshot, Semaphore};

use crate::service::{Metrics, ScoreRequest, ScoreResponse, ScoringService};

#[derive(Clone)]
struct AppState {
    svc: Arc<ScoringService>,
    workers: Arc<Semaphore>,
}

pub fn router(svc: Arc<ScoringService>) -> Router {
    let workers = Arc::new(Semaphore::new(svc.config().workers));
    Router::new()
        .route("/v1/score", post(score))
        .route("/v1/metrics", get(metrics))
        .route("/v1/healthz", get(|| async { "ok" }))
        .with_state(AppState { svc, workers })
}

async fn score(State(app): State<AppState>, Json(req): Json<ScoreRequest>) -> Result<Json<ScoreResponse>, (StatusCode, String)> {
    if req.items.is_empty() {
        return Err((StatusCode::BAD_REQUEST, "request has no items".into()));
    }
    let svc = app.svc.clone();
    let arrival = svc.now();
    let wait = svc.admit_at(arrival) - svc.now();
    if wait > 0.0 {
        tokio::time::sleep(Duration::from_secs_f64(wait)).await;
    }
    let _permit = app.workers.acquire().await.map_err(|e| (StatusCode::SERVICE_UNAVAILABLE, e.to_string()))?;
    tokio::task::spawn_blocking(move || svc.finish(&req, arrival))
        .await
        .map(Json)
        .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

async fn metrics(State(app): State<AppState>) -> Json<Metrics> {
    Json(app.svc.metrics())
}

/// Periodic controller updates until the returned sender is dropped or fired.
fn spawn_pid_loop(svc: Arc<ScoringService>) -> oneshot::Sender<()> {
    let (tx, mut rx) = oneshot::channel::<()>();
    let dt = svc.config().pid.interval_s;
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs_f64(dt));
        tick.tick().await;
        loop {
            tokio::select! {
                _ = tick.tick() => { svc.pid_tick_at(svc.now(), dt); }
                _ = &mut rx => break,
            }
        }
    });
    tx
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    svc: Arc<ScoringService>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let stop_pid = spawn_pid_loop(svc.clone());
    let res = axum::serve(listener, router(svc)).with_graceful_shutdown(shutdown).await;
    let _ = stop_pid.send(());
    res
}

/// A server running on its own runtime thread.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) -> std::io::Result<()> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}

/// Bind `addr` (port 0 picks a free port) and serve on a background thread.
pub fn spawn_server(svc: Arc<ScoringService>, addr: SocketAddr) -> std::io::Result<ServerHandle> {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(1).enable_all().build()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        rt.block_on(serve(svc, listener, async {
            let _ = rx.await;
        }))
    });
    Ok(ServerHandle { addr, stop: Some(tx), thread: Some(thread) })
}
