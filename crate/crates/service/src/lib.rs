//! Live learning sessions for a human trainer.
//!
//! `POST /session` creates a session from a JSON [`SessionConfig`] and starts
//! its step loop. `GET /session/{id}` returns a [`SessionSnapshot`]. The
//! socket at `/session/{id}/ws` streams `stateUpdate`, `episodeEnd`,
//! `adviceAck` and `configUpdate` messages and accepts `adviceSubmit` and
//! `configUpdate` from the client (see [`wire`]).
//!
//! In a live session the trainer's advice replaces the simulated trainer: the
//! learner consults its mailbox at every step and uses whatever advice is
//! waiting there, subject to the same confidence gate and affordance check as
//! in batch runs.

pub mod session;
pub mod wire;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use affordance_irl::affordance::FailurePredictor;
use affordance_irl::fusion::CommandLexicon;
use affordance_irl::scenario::StateSpace;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use tokio::sync::{broadcast, mpsc, watch};
use tokio::time::Instant;

pub use session::{Mailbox, Session, SessionConfig, SessionSnapshot};
use wire::{parse_incoming, AdviceAck, ErrorMessage, Incoming, WireBody, WireMessage};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no session with id {0}")]
    UnknownSession(u64),
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] affordance_irl::Error),
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::BAD_REQUEST,
        };
        (status, Json(ErrorMessage { message: self.to_string() })).into_response()
    }
}

/// Shared by every session of one server.
pub struct Environment {
    pub space: Arc<StateSpace>,
    pub lexicon: CommandLexicon,
    pub affordances: Option<Arc<dyn FailurePredictor>>,
}

impl Environment {
    pub fn new(lexicon: CommandLexicon, affordances: Option<Arc<dyn FailurePredictor>>) -> Environment {
        Environment {
            space: Arc::new(StateSpace::enumerate()),
            lexicon,
            affordances,
        }
    }
}

struct Handle {
    session: Mutex<Session>,
    updates: broadcast::Sender<String>,
    /// Bumped whenever pause or pace changes, to wake the step loop.
    wake: watch::Sender<u64>,
}

impl Handle {
    fn lock(&self) -> std::sync::MutexGuard<'_, Session> {
        self.session.lock().expect("session lock")
    }

    fn broadcast(&self, body: WireBody) {
        // Nobody listening is fine.
        let _ = self.updates.send(WireMessage::from(body).to_json());
    }
}

#[derive(Clone)]
pub struct AppState {
    env: Arc<Environment>,
    sessions: Arc<RwLock<HashMap<u64, Arc<Handle>>>>,
    next_id: Arc<AtomicU64>,
}

impl AppState {
    pub fn new(env: Environment) -> AppState {
        AppState {
            env: Arc::new(env),
            sessions: Arc::default(),
            next_id: Arc::new(AtomicU64::new(1)),
        }
    }

    fn handle(&self, id: u64) -> Result<Arc<Handle>, ServiceError> {
        self.sessions
            .read()
            .expect("session table lock")
            .get(&id)
            .cloned()
            .ok_or(ServiceError::UnknownSession(id))
    }

    /// Creates a session and spawns its step loop on the current runtime.
    pub fn start_session(&self, config: SessionConfig) -> Result<SessionSnapshot, ServiceError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let session = Session::new(id, config, self.env.space.clone(), self.env.affordances.clone())?;
        let snapshot = session.snapshot();
        let (updates, _) = broadcast::channel(1024);
        let (wake, _) = watch::channel(0);
        let handle = Arc::new(Handle {
            session: Mutex::new(session),
            updates,
            wake,
        });
        self.sessions
            .write()
            .expect("session table lock")
            .insert(id, handle.clone());
        tokio::spawn(step_loop(handle));
        tracing::info!(session = id, "session started");
        Ok(snapshot)
    }

    pub fn snapshot(&self, id: u64) -> Result<SessionSnapshot, ServiceError> {
        Ok(self.handle(id)?.lock().snapshot())
    }
}

/// Steps the session no faster than its pace until it finishes.
async fn step_loop(handle: Arc<Handle>) {
    let mut wake = handle.wake.subscribe();
    let mut last_step: Option<Instant> = None;
    loop {
        let (paused, period) = {
            let s = handle.lock();
            (s.paused(), Duration::from_secs_f64(1.0 / s.config().pace))
        };
        if paused {
            if wake.changed().await.is_err() {
                return;
            }
            continue;
        }
        if let Some(t) = last_step {
            let deadline = t + period;
            if Instant::now() < deadline {
                tokio::select! {
                    _ = tokio::time::sleep_until(deadline) => {}
                    changed = wake.changed() => {
                        if changed.is_err() {
                            return;
                        }
                        continue;
                    }
                }
            }
        }
        let messages = {
            let mut s = handle.lock();
            if s.paused() {
                continue;
            }
            s.step()
        };
        if messages.is_empty() {
            tracing::info!(session = handle.lock().id(), "session finished");
            return;
        }
        last_step = Some(Instant::now());
        for m in messages {
            handle.broadcast(m);
        }
    }
}

async fn create(
    State(state): State<AppState>,
    body: Option<Json<SessionConfig>>,
) -> Result<(StatusCode, Json<SessionSnapshot>), ServiceError> {
    let config = body.map(|Json(c)| c).unwrap_or_default();
    Ok((StatusCode::CREATED, Json(state.start_session(config)?)))
}

async fn snapshot(
    State(state): State<AppState>,
    Path(id): Path<u64>,
) -> Result<Json<SessionSnapshot>, ServiceError> {
    Ok(Json(state.snapshot(id)?))
}

async fn socket(
    State(state): State<AppState>,
    Path(id): Path<u64>,
    upgrade: WebSocketUpgrade,
) -> Result<Response, ServiceError> {
    let handle = state.handle(id)?;
    let env = state.env.clone();
    Ok(upgrade.on_upgrade(move |ws| client(ws, handle, env)))
}

async fn client(ws: WebSocket, handle: Arc<Handle>, env: Arc<Environment>) {
    let (mut sink, mut stream) = ws.split();
    let mut updates = handle.updates.subscribe();
    let (direct_tx, mut direct) = mpsc::unbounded_channel::<String>();

    let hello = WireMessage::from(WireBody::ConfigUpdate(handle.lock().settings())).to_json();
    if sink.send(Message::Text(hello.into())).await.is_err() {
        return;
    }

    let writer = tokio::spawn(async move {
        loop {
            let text = tokio::select! {
                Some(text) = direct.recv() => text,
                update = updates.recv() => match update {
                    Ok(text) => text,
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        tracing::warn!(skipped = n, "slow client dropped state updates");
                        continue;
                    }
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                else => break,
            };
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });

    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let reply = |body: WireBody| {
            let _ = direct_tx.send(WireMessage::from(body).to_json());
        };
        match parse_incoming(text.as_str()) {
            Incoming::Advice(submit) => {
                let acks = handle.lock().submit(&submit, &env.lexicon);
                for ack in acks {
                    route_ack(&handle, ack, &reply);
                }
            }
            Incoming::BadAdvice(client_ref, reason) => {
                let ack = AdviceAck::rejected(client_ref, reason);
                reply(WireBody::AdviceAck(ack));
            }
            Incoming::Config(update) => {
                let applied = handle.lock().apply(&update);
                match applied {
                    Ok(settings) => {
                        handle.wake.send_modify(|n| *n += 1);
                        handle.broadcast(WireBody::ConfigUpdate(settings));
                    }
                    Err(e) => reply(WireBody::Error(ErrorMessage { message: e.to_string() })),
                }
            }
            Incoming::Invalid(message) => reply(WireBody::Error(ErrorMessage { message })),
        }
    }
    writer.abort();
}

/// A superseded submission may belong to another client, so its ack goes to
/// everyone; the submitter's own ack goes back to it alone.
fn route_ack(handle: &Handle, ack: AdviceAck, reply: &impl Fn(WireBody)) {
    if ack.status == wire::AckStatus::Superseded {
        handle.broadcast(WireBody::AdviceAck(ack));
    } else {
        reply(WireBody::AdviceAck(ack));
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", post(create))
        .route("/session/{id}", get(snapshot))
        .route("/session/{id}/ws", get(socket))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, env: Environment) -> std::io::Result<()> {
    serve_on(tokio::net::TcpListener::bind(addr).await?, env).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, env: Environment) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "session service listening");
    axum::serve(listener, router(AppState::new(env))).await
}
