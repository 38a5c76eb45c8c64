//! HTTP routes and the `/ws` connection task.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use gex_client::api::*;
use gex_client::messages::{ClientMessage, Command, Event, JointFrame, ModelSummary, ServerMessage, StateFrame};
use gex_core::fixtures;
use gex_core::gesture::read_gesture;
use gex_core::kinematics::forward_kinematics;
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, watch};
use tokio::time::MissedTickBehavior;

use crate::config::{data_path, Settings};
use crate::live::{Envelope, LiveHandle, LiveLoop, LoopStats, Request, Snapshot};
use crate::ops;

/// Replies queued per connection before further ones are dropped.
const OUTBOX_CAPACITY: usize = 64;

/// How long a closing handshake may wait on a client that is not reading.
const CLOSE_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Clone)]
pub struct AppState {
    settings: Arc<Settings>,
    live: Option<LiveHandle>,
    shutdown: watch::Receiver<bool>,
}

pub fn router(settings: Arc<Settings>, live: Option<LiveHandle>, shutdown: watch::Receiver<bool>) -> Router {
    Router::new()
        .route("/api/workspace", post(workspace))
        .route("/api/retarget", post(retarget))
        .route("/api/decode", post(decode))
        .route("/api/replay", post(replay))
        .route("/api/status", get(status))
        .route("/ws", get(ws))
        .with_state(AppState { settings, live, shutdown })
}

struct ApiFailure(StatusCode, String);

impl IntoResponse for ApiFailure {
    fn into_response(self) -> Response {
        (self.0, Json(ApiError { error: self.1 })).into_response()
    }
}

/// Request bodies that fail to parse get the same JSON error shape as
/// failed operations.
type Body<Q> = Result<Json<Q>, JsonRejection>;

async fn blocking<Q, R>(state: AppState, body: Body<Q>, op: fn(&Settings, &Q) -> ops::Result<R>) -> Result<Json<R>, ApiFailure>
where
    Q: Send + 'static,
    R: Send + 'static,
{
    let Json(req) = body.map_err(|e| ApiFailure(e.status(), e.body_text()))?;
    let settings = state.settings.clone();
    match tokio::task::spawn_blocking(move || op(&settings, &req)).await {
        Ok(Ok(r)) => Ok(Json(r)),
        Ok(Err(e)) => Err(ApiFailure(StatusCode::BAD_REQUEST, e.0)),
        Err(e) => Err(ApiFailure(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

async fn workspace(State(s): State<AppState>, body: Body<WorkspaceRequest>) -> Result<Json<WorkspaceResponse>, ApiFailure> {
    blocking(s, body, ops::workspace).await
}

async fn retarget(State(s): State<AppState>, body: Body<RetargetRequest>) -> Result<Json<RetargetResponse>, ApiFailure> {
    blocking(s, body, ops::retarget).await
}

async fn decode(State(s): State<AppState>, body: Body<DecodeRequest>) -> Result<Json<DecodeResponse>, ApiFailure> {
    blocking(s, body, |_, r| ops::decode(r)).await
}

async fn replay(State(s): State<AppState>, body: Body<ReplayRequest>) -> Result<Json<ReplayResponse>, ApiFailure> {
    blocking(s, body, ops::replay).await
}

#[derive(Serialize)]
struct Status {
    live: bool,
    control: Option<LoopStats>,
}

async fn status(State(s): State<AppState>) -> Json<Status> {
    Json(Status { live: s.live.is_some(), control: s.live.as_ref().map(LiveHandle::stats) })
}

async fn ws(State(s): State<AppState>, upgrade: WebSocketUpgrade) -> Response {
    match s.live.clone() {
        None => ApiFailure(StatusCode::SERVICE_UNAVAILABLE, "no live session on this gateway".into()).into_response(),
        Some(live) => upgrade.on_upgrade(move |socket| connection(socket, s.settings, live, s.shutdown)),
    }
}

/// Check a client command and load anything it refers to.
fn to_request(settings: &Settings, command: Command) -> Result<Request, String> {
    Ok(match command {
        Command::SetGloveQ { q } => Request::SetGloveQ(q),
        Command::SetScene { scene } => Request::SetScene(scene),
        Command::SetParams { params } => Request::SetParams(params),
        Command::Record { on: false, .. } => Request::RecordStop,
        Command::Record { on: true, path: None } => return Err("record on needs a path".into()),
        Command::Record { on: true, path: Some(p) } => Request::RecordStart(data_path(&settings.data_dir, &p)?),
        Command::Replay { path } => {
            let width = Some(settings.rig.glove.dof());
            let gesture = match path.as_str() {
                "pinch" => read_gesture(fixtures::PINCH_GESTURE.as_bytes(), width),
                "constant" => read_gesture(fixtures::CONSTANT_GESTURE.as_bytes(), width),
                p => {
                    let full = data_path(&settings.data_dir, p)?;
                    let file = std::fs::File::open(&full).map_err(|e| format!("{}: {e}", full.display()))?;
                    read_gesture(std::io::BufReader::new(file), width)
                }
            }
            .map_err(|e| format!("{path}: {e}"))?;
            Request::Replay { name: path, gesture }
        }
    })
}

fn parse_client(text: &str) -> Result<ClientMessage, (u64, String)> {
    serde_json::from_str(text).map_err(|e| {
        let seq = serde_json::from_str::<serde_json::Value>(text)
            .ok()
            .and_then(|v| v.get("seq").and_then(|s| s.as_u64()))
            .unwrap_or(0);
        (seq, format!("malformed message: {e}"))
    })
}

fn state_message(settings: &Settings, seq: u64, snap: &Snapshot) -> ServerMessage {
    let frames = |model, q: &[f64]| -> Vec<JointFrame> {
        let rad: Vec<f64> = q.iter().map(|d| d.to_radians()).collect();
        forward_kinematics(model, &rad).map(|fk| fk.frames.iter().map(JointFrame::from).collect()).unwrap_or_default()
    };
    ServerMessage {
        seq,
        event: Event::State(StateFrame {
            frames_glove: frames(&settings.rig.glove, &snap.report.q_glove),
            frames_hand: frames(&settings.rig.hand, &snap.report.q_hand),
            report: snap.report.clone(),
            recording: snap.recording,
            replaying: snap.replaying,
        }),
    }
}

async fn connection(socket: WebSocket, settings: Arc<Settings>, live: LiveHandle, mut shutdown: watch::Receiver<bool>) {
    let (mut sink, mut stream) = socket.split();
    let (outbox, mut replies) = mpsc::channel::<ServerMessage>(OUTBOX_CAPACITY);
    let mut snapshots = live.subscribe();
    let mut scene = live.scene();
    let mut push_seq = 0u64;
    let mut next_push = || {
        push_seq += 1;
        push_seq
    };
    let mut ticker = tokio::time::interval(Duration::from_secs_f64(1.0 / settings.broadcast_rate));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
    tracing::info!("client connected");

    let hello = [
        ServerMessage {
            seq: next_push(),
            event: Event::Model { glove: ModelSummary::from(&settings.rig.glove), hand: ModelSummary::from(&settings.rig.hand) },
        },
        ServerMessage { seq: next_push(), event: Event::Scene { scene: scene.borrow_and_update().clone() } },
    ];
    for m in hello {
        if send_json(&mut sink, &m).await.is_err() {
            return;
        }
    }

    loop {
        let out: Option<ServerMessage> = tokio::select! {
            incoming = stream.next() => match incoming {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
                Some(Ok(Message::Text(text))) => match parse_client(&text) {
                    Err((seq, message)) => Some(ServerMessage { seq, event: Event::Error { message } }),
                    Ok(ClientMessage { seq, command }) => {
                        let settings = settings.clone();
                        let parsed = tokio::task::spawn_blocking(move || to_request(&settings, command)).await;
                        match parsed.map_err(|e| e.to_string()).and_then(|r| r) {
                            Err(message) => Some(ServerMessage { seq, event: Event::Error { message } }),
                            Ok(request) => live
                                .submit(Envelope { seq, request, reply: outbox.clone() })
                                .err()
                                .map(|e| ServerMessage { seq, event: Event::Error { message: e.to_string() } }),
                        }
                    }
                },
                Some(Ok(Message::Binary(_))) => Some(ServerMessage {
                    seq: 0,
                    event: Event::Error { message: "binary frames are not supported; send JSON text".into() },
                }),
                Some(Ok(_)) => None,
            },
            Some(reply) = replies.recv() => Some(reply),
            _ = ticker.tick() => latest(&mut snapshots).map(|snap| state_message(&settings, next_push(), &snap)),
            changed = scene.changed() => match changed {
                Err(_) => break,
                Ok(()) => Some(ServerMessage { seq: next_push(), event: Event::Scene { scene: scene.borrow_and_update().clone() } }),
            },
            _ = shutdown.changed() => break,
        };
        if let Some(m) = out {
            // A client that stops reading must not hold up shutdown.
            let sent = tokio::select! {
                r = send_json(&mut sink, &m) => r.is_ok(),
                _ = shutdown.changed() => false,
            };
            if !sent {
                break;
            }
        }
    }
    let _ = tokio::time::timeout(CLOSE_TIMEOUT, sink.send(Message::Close(None))).await;
    tracing::info!("client disconnected");
}

/// Newest queued snapshot, skipping anything older.
fn latest(rx: &mut broadcast::Receiver<Arc<Snapshot>>) -> Option<Arc<Snapshot>> {
    let mut newest = None;
    loop {
        match rx.try_recv() {
            Ok(s) => newest = Some(s),
            Err(broadcast::error::TryRecvError::Lagged(_)) => continue,
            Err(_) => return newest,
        }
    }
}

async fn send_json<S>(sink: &mut S, msg: &ServerMessage) -> Result<(), ()>
where
    S: futures::Sink<Message> + Unpin,
{
    let text = serde_json::to_string(msg).map_err(|_| ())?;
    sink.send(Message::Text(text.into())).await.map_err(|_| ())
}

/// A gateway bound to a socket.
pub struct Gateway {
    pub addr: SocketAddr,
    live: Option<LiveLoop>,
    stop: watch::Sender<bool>,
    server: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Gateway {
    /// Bind `addr` and start serving. With `live`, the teleop loop is started
    /// and `/ws` is available; otherwise only `/api` is.
    pub async fn start(settings: Settings, addr: SocketAddr, live: bool) -> anyhow::Result<Self> {
        let settings = Arc::new(settings);
        let live = if live { Some(LiveLoop::start(settings.clone()).map_err(anyhow::Error::msg)?) } else { None };
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let (stop, stopped) = watch::channel(false);
        let app = router(settings, live.as_ref().map(LiveLoop::handle), stopped.clone());
        let mut wait = stopped;
        let server = tokio::spawn(async move {
            axum::serve(listener, app.into_make_service())
                .with_graceful_shutdown(async move {
                    let _ = wait.wait_for(|s| *s).await;
                })
                .await
        });
        tracing::debug!(%addr, "gateway listening");
        Ok(Self { addr, live, stop, server })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn ws_url(&self) -> String {
        format!("ws://{}/ws", self.addr)
    }

    /// Serve until `signal` resolves, then shut down.
    pub async fn run_until(self, signal: impl Future<Output = ()>) -> anyhow::Result<()> {
        signal.await;
        self.shutdown().await
    }

    /// Close client connections, stop the control loop and flush any
    /// recording.
    pub async fn shutdown(self) -> anyhow::Result<()> {
        let _ = self.stop.send(true);
        self.server.await??;
        if let Some(live) = self.live {
            tokio::task::spawn_blocking(move || live.shutdown()).await?;
        }
        Ok(())
    }
}
