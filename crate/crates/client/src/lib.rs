//! Client side of the gex teleoperation service: the `/ws` message schema, the
//! `/api` operation bodies, and thin HTTP and WebSocket clients.

pub mod api;
pub mod messages;

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use api::*;
use messages::{ClientMessage, Command, Event, ServerMessage, StateFrame};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server rejected the request ({status}): {message}")]
    Api { status: u16, message: String },
    #[error("websocket: {0}")]
    Ws(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("bad message from server: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("connection closed")]
    Closed,
    #[error("timed out waiting for the server")]
    Timeout,
    #[error("server error for request {seq}: {message}")]
    Remote { seq: u64, message: String },
}

pub type Result<T, E = ClientError> = std::result::Result<T, E>;

/// Client for the one-shot operations under `/api`.
#[derive(Debug, Clone)]
pub struct ApiClient {
    base: String,
    http: reqwest::Client,
}

impl ApiClient {
    /// `base` is the service root, e.g. `http://127.0.0.1:8750`.
    pub fn new(base: impl Into<String>) -> Self {
        Self { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn post<Q: Serialize, R: DeserializeOwned>(&self, path: &str, body: &Q) -> Result<R> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        let status = resp.status();
        if !status.is_success() {
            let message = match resp.json::<ApiError>().await {
                Ok(e) => e.error,
                Err(_) => status.to_string(),
            };
            return Err(ClientError::Api { status: status.as_u16(), message });
        }
        Ok(resp.json().await?)
    }

    pub async fn workspace(&self, req: &WorkspaceRequest) -> Result<WorkspaceResponse> {
        self.post("/api/workspace", req).await
    }

    pub async fn retarget(&self, req: &RetargetRequest) -> Result<RetargetResponse> {
        self.post("/api/retarget", req).await
    }

    pub async fn decode(&self, req: &DecodeRequest) -> Result<DecodeResponse> {
        self.post("/api/decode", req).await
    }

    pub async fn replay(&self, req: &ReplayRequest) -> Result<ReplayResponse> {
        self.post("/api/replay", req).await
    }
}

/// Live session over `/ws`.
pub struct Session {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    next_seq: u64,
}

impl Session {
    /// `url` is the full endpoint, e.g. `ws://127.0.0.1:8750/ws`.
    pub async fn connect(url: &str) -> Result<Self> {
        let (ws, _) = tokio_tungstenite::connect_async(url).await?;
        Ok(Self { ws, next_seq: 1 })
    }

    /// Send a command and return the `seq` it was given.
    pub async fn send(&mut self, command: Command) -> Result<u64> {
        let seq = self.next_seq;
        self.next_seq += 1;
        let text = serde_json::to_string(&ClientMessage { seq, command })?;
        self.ws.send(Message::text(text)).await?;
        Ok(seq)
    }

    /// Send raw text, bypassing the schema.
    pub async fn send_raw(&mut self, text: &str) -> Result<()> {
        self.ws.send(Message::text(text)).await?;
        Ok(())
    }

    pub async fn recv(&mut self) -> Result<ServerMessage> {
        loop {
            match self.ws.next().await {
                None => return Err(ClientError::Closed),
                Some(msg) => match msg? {
                    Message::Text(t) => return Ok(serde_json::from_str(&t)?),
                    Message::Close(_) => return Err(ClientError::Closed),
                    _ => continue,
                },
            }
        }
    }

    pub async fn recv_timeout(&mut self, timeout: Duration) -> Result<ServerMessage> {
        tokio::time::timeout(timeout, self.recv()).await.map_err(|_| ClientError::Timeout)?
    }

    /// Wait for the reply to request `seq`, skipping pushes in between.
    pub async fn reply(&mut self, seq: u64, timeout: Duration) -> Result<Event> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(tokio::time::Instant::now());
            let msg = self.recv_timeout(left).await?;
            if msg.seq != seq || matches!(msg.event, Event::State(_) | Event::Scene { .. } | Event::Model { .. }) {
                continue;
            }
            return match msg.event {
                Event::Error { message } => Err(ClientError::Remote { seq, message }),
                other => Ok(other),
            };
        }
    }

    /// Send a command and wait for its `ack`.
    pub async fn request(&mut self, command: Command, timeout: Duration) -> Result<Event> {
        let seq = self.send(command).await?;
        self.reply(seq, timeout).await
    }

    /// Next `state` push.
    pub async fn next_state(&mut self, timeout: Duration) -> Result<StateFrame> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(tokio::time::Instant::now());
            if let Event::State(s) = self.recv_timeout(left).await?.event {
                return Ok(s);
            }
        }
    }

    pub async fn close(mut self) -> Result<()> {
        self.ws.close(None).await?;
        Ok(())
    }
}
