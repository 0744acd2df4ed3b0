//! HTTP/WebSocket front end: `GET /health`, `GET /scenarios` and the
//! session stream at `/session/{id}`.
//!
//! Each session runs in its own task that owns the [`Session`]; connections
//! forward command lines to it and receive the broadcast stream. The first
//! connection to a session is its writer, later ones observe.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use ctsdr_core::model::RobotConfig;
use ctsdr_core::sim::builtin_scenarios;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc};

use crate::protocol::{error, ErrorCode};
use crate::session::{Session, SessionOptions};

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub config: RobotConfig,
    pub session: SessionOptions,
}

enum Request {
    Connect {
        writer: bool,
        reply: mpsc::UnboundedSender<String>,
    },
    Line {
        text: String,
        reply: mpsc::UnboundedSender<String>,
    },
}

#[derive(Clone)]
struct SessionHandle {
    requests: mpsc::UnboundedSender<Request>,
    stream: broadcast::Sender<String>,
    writer: Arc<AtomicU64>,
}

struct AppState {
    opts: ServerOptions,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    next_connection: AtomicU64,
}

pub fn router(opts: ServerOptions) -> Router {
    let state = Arc::new(AppState {
        opts,
        sessions: Mutex::new(HashMap::new()),
        next_connection: AtomicU64::new(1),
    });
    Router::new()
        .route("/health", get(health))
        .route("/scenarios", get(scenarios))
        .route("/session/{id}", get(session_ws))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, opts: ServerOptions) -> std::io::Result<()> {
    axum::serve(listener, router(opts)).await
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "protocol": crate::protocol::PROTOCOL_VERSION, "version": env!("CARGO_PKG_VERSION") }))
}

async fn scenarios(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let list: Vec<_> = builtin_scenarios(&state.opts.config)
        .into_iter()
        .map(|s| json!({ "name": s.name, "description": s.description, "phases": s.phases.len() }))
        .collect();
    Json(json!(list))
}

fn session_handle(state: &AppState, id: &str) -> ctsdr_core::Result<SessionHandle> {
    let mut sessions = state.sessions.lock().expect("session table lock");
    if let Some(h) = sessions.get(id) {
        return Ok(h.clone());
    }
    let session = Session::new(id, state.opts.config.clone(), state.opts.session.clone())?;
    let (requests, rx) = mpsc::unbounded_channel();
    let (stream, _) = broadcast::channel(8192);
    let handle = SessionHandle {
        requests,
        stream: stream.clone(),
        writer: Arc::new(AtomicU64::new(0)),
    };
    tokio::spawn(run_session(session, rx, stream));
    sessions.insert(id.to_string(), handle.clone());
    Ok(handle)
}

/// Serializes everything that touches the session: ticks and commands.
async fn run_session(
    mut session: Session,
    mut requests: mpsc::UnboundedReceiver<Request>,
    stream: broadcast::Sender<String>,
) {
    let period = Duration::from_secs_f64(1.0 / session.options().tick_hz);
    let mut ticker = tokio::time::interval(period);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let publish = |msgs: Vec<crate::protocol::Message>, reply: Option<&mpsc::UnboundedSender<String>>| {
        for m in msgs {
            if m.is_broadcast() {
                let _ = stream.send(m.to_line());
            } else if let Some(r) = reply {
                let _ = r.send(m.to_line());
            }
        }
    };
    loop {
        tokio::select! {
            _ = ticker.tick() => publish(session.tick(), None),
            req = requests.recv() => match req {
                Some(Request::Connect { writer, reply }) => publish(session.hello(writer), Some(&reply)),
                Some(Request::Line { text, reply }) => publish(session.handle_message(&text), Some(&reply)),
                None => break,
            },
        }
    }
}

async fn session_ws(ws: WebSocketUpgrade, Path(id): Path<String>, State(state): State<Arc<AppState>>) -> Response {
    let handle = match session_handle(&state, &id) {
        Ok(h) => h,
        Err(e) => {
            return (axum::http::StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response();
        }
    };
    let connection = state.next_connection.fetch_add(1, Ordering::Relaxed);
    ws.on_upgrade(move |socket| connection_loop(socket, handle, connection))
}

async fn connection_loop(mut socket: WebSocket, handle: SessionHandle, connection: u64) {
    let writer = handle
        .writer
        .compare_exchange(0, connection, Ordering::AcqRel, Ordering::Acquire)
        .is_ok();
    let mut stream = handle.stream.subscribe();
    let (reply, mut replies) = mpsc::unbounded_channel();
    if handle
        .requests
        .send(Request::Connect {
            writer,
            reply: reply.clone(),
        })
        .is_err()
    {
        return;
    }
    loop {
        tokio::select! {
            incoming = socket.recv() => match incoming {
                Some(Ok(WsMessage::Text(text))) => {
                    for line in text.as_str().lines().filter(|l| !l.trim().is_empty()) {
                        if writer {
                            let _ = handle.requests.send(Request::Line { text: line.to_string(), reply: reply.clone() });
                        } else {
                            let _ = reply.send(error(ErrorCode::ReadOnly, "another connection controls this session", None).to_line());
                        }
                    }
                }
                Some(Ok(WsMessage::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            line = replies.recv() => {
                let Some(line) = line else { break };
                if socket.send(WsMessage::Text(line.into())).await.is_err() {
                    break;
                }
            }
            line = stream.recv() => match line {
                Ok(line) => {
                    if socket.send(WsMessage::Text(line.into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    let msg = error(ErrorCode::Internal, format!("client lagged; {n} messages dropped"), None);
                    if socket.send(WsMessage::Text(msg.to_line().into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
    if writer {
        handle.writer.store(0, Ordering::Release);
    }
}
