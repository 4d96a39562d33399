use std::sync::Arc;
use std::time::{Duration, Instant};

use affordance_irl::affordance::TrueFailures;
use affordance_irl::fusion::CommandLexicon;
use affordance_irl::scenario::Action;
use affordance_irl_service::wire::{
    AckStatus, AdviceSubmit, ConfigUpdate, WireBody, WireMessage, WIRE_VERSION,
};
use affordance_irl_service::{router, AppState, Environment, SessionSnapshot};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use futures_util::{SinkExt, StreamExt};
use http_body_util::BodyExt;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};
use tower::ServiceExt;

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

struct Server {
    state: AppState,
    addr: std::net::SocketAddr,
}

async fn server() -> Server {
    let env = Environment::new(CommandLexicon::default(), Some(Arc::new(TrueFailures)));
    let state = AppState::new(env);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(state.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server { state, addr }
}

impl Server {
    async fn http(&self, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, serde_json::Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if body.is_some() {
            req = req.header("content-type", "application/json");
        }
        let req = req
            .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
            .unwrap();
        let resp = router(self.state.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null))
    }

    async fn create(&self, config: serde_json::Value) -> u64 {
        let (status, body) = self.http("POST", "/session", Some(&config.to_string())).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body["session_id"].as_u64().unwrap()
    }

    async fn snapshot(&self, id: u64) -> SessionSnapshot {
        let (status, body) = self.http("GET", &format!("/session/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        serde_json::from_value(body).unwrap()
    }

    async fn connect(&self, id: u64) -> Socket {
        let url = format!("ws://{}/session/{id}/ws", self.addr);
        tokio_tungstenite::connect_async(url).await.unwrap().0
    }
}

async fn send(ws: &mut Socket, body: WireBody) {
    let text = WireMessage::from(body).to_json();
    ws.send(Message::Text(text.into())).await.unwrap();
}

async fn next(ws: &mut Socket) -> WireMessage {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("timed out waiting for a message")
            .expect("socket closed")
            .unwrap();
        if let Message::Text(t) = msg {
            let parsed: WireMessage = serde_json::from_str(t.as_str()).unwrap();
            assert_eq!(parsed.v, WIRE_VERSION);
            return parsed;
        }
    }
}

/// Skips messages until `pick` accepts one.
async fn wait_for<T>(ws: &mut Socket, mut pick: impl FnMut(&WireBody) -> Option<T>) -> T {
    loop {
        if let Some(t) = pick(&next(ws).await.body) {
            return t;
        }
    }
}

fn paused(pace: f64) -> serde_json::Value {
    serde_json::json!({ "start_paused": true, "pace": pace, "learner": { "eta": 1.0 } })
}

fn resume() -> WireBody {
    WireBody::ConfigUpdate(ConfigUpdate {
        paused: Some(false),
        ..ConfigUpdate::default()
    })
}

#[tokio::test]
async fn scripted_trainer_round_trip() {
    let srv = server().await;
    let id = srv.create(paused(50.0)).await;
    let mut ws = srv.connect(id).await;

    match next(&mut ws).await.body {
        WireBody::ConfigUpdate(c) => assert_eq!(c.paused, Some(true)),
        other => panic!("expected the settings first, got {other:?}"),
    }

    send(&mut ws, WireBody::AdviceSubmit(AdviceSubmit::raw("go left", [Action::GoLeft; 5]))).await;
    let ack = wait_for(&mut ws, |b| match b {
        WireBody::AdviceAck(a) => Some(a.clone()),
        _ => None,
    })
    .await;
    assert_eq!(ack.status, AckStatus::Queued);
    assert_eq!(ack.queued_at_step, Some(1));
    assert_eq!(ack.feedback.unwrap().confidence, 1.0);

    send(&mut ws, resume()).await;
    let update = wait_for(&mut ws, |b| match b {
        WireBody::StateUpdate(u) => Some(u.clone()),
        _ => None,
    })
    .await;
    assert_eq!(update.step, 1);
    assert_eq!(update.advice_id, ack.advice_id);
    assert!(update.advice_used);
    assert!(update.action == Action::GoLeft || update.affordance_bypassed);

    // A reloaded view rebuilds from the snapshot.
    let snap = srv.snapshot(id).await;
    assert_eq!(snap.session_id, id);
    assert!(snap.step >= 1);
    assert_eq!(snap.recent_steps.first(), Some(&update));
    assert_eq!(snap.recent_acks.first(), Some(&ack));
}

#[tokio::test]
async fn failing_advice_shows_a_bypass() {
    let srv = server().await;
    let id = srv.create(paused(50.0)).await;
    let mut ws = srv.connect(id).await;
    send(&mut ws, WireBody::AdviceSubmit(AdviceSubmit::direct(Action::Wipe, 1.0))).await;
    send(&mut ws, resume()).await;
    let update = wait_for(&mut ws, |b| match b {
        WireBody::StateUpdate(u) => Some(u.clone()),
        _ => None,
    })
    .await;
    assert!(update.advice_used);
    assert!(update.affordance_bypassed);
    assert_ne!(update.action, Action::Wipe);
}

#[tokio::test]
async fn idle_trainer_leaves_the_agent_autonomous() {
    let srv = server().await;
    let id = srv.create(serde_json::json!({ "pace": 200.0 })).await;
    let mut ws = srv.connect(id).await;
    for _ in 0..5 {
        let u = wait_for(&mut ws, |b| match b {
            WireBody::StateUpdate(u) => Some(u.clone()),
            _ => None,
        })
        .await;
        assert!(!u.advice_used);
        assert_eq!(u.advice_id, None);
    }
}

#[tokio::test]
async fn updates_respect_the_pace() {
    let srv = server().await;
    let pace = 20.0;
    let id = srv.create(serde_json::json!({ "pace": pace, "start_paused": true })).await;
    let mut ws = srv.connect(id).await;
    let resumed = Instant::now();
    send(&mut ws, resume()).await;
    let mut seen = Vec::new();
    while seen.len() < 6 {
        let step = wait_for(&mut ws, |b| match b {
            WireBody::StateUpdate(u) => Some(u.step),
            _ => None,
        })
        .await;
        seen.push((step, Instant::now()));
    }
    let steps: Vec<u64> = seen.iter().map(|s| s.0).collect();
    assert_eq!(steps, vec![1, 2, 3, 4, 5, 6]);
    // Step 1 follows the resume at once; each later one waits a full period.
    let elapsed = seen[5].1 - resumed;
    assert!(elapsed >= Duration::from_secs_f64(5.0 / pace), "{elapsed:?}");
}

#[tokio::test]
async fn superseded_advice_is_announced_to_everyone() {
    let srv = server().await;
    let id = srv.create(paused(50.0)).await;
    let mut first = srv.connect(id).await;
    let mut second = srv.connect(id).await;
    let older = AdviceSubmit {
        client_ref: Some("first".into()),
        ..AdviceSubmit::direct(Action::GoHome, 0.9)
    };
    send(&mut first, WireBody::AdviceSubmit(older)).await;
    let queued = wait_for(&mut first, |b| match b {
        WireBody::AdviceAck(a) => Some(a.clone()),
        _ => None,
    })
    .await;
    send(&mut second, WireBody::AdviceSubmit(AdviceSubmit::direct(Action::GoRight, 0.9))).await;
    let notice = wait_for(&mut first, |b| match b {
        WireBody::AdviceAck(a) if a.status == AckStatus::Superseded => Some(a.clone()),
        _ => None,
    })
    .await;
    assert_eq!(notice.advice_id, queued.advice_id);
    assert_eq!(notice.client_ref.as_deref(), Some("first"));
    assert!(notice.superseded_by.is_some());
}

#[tokio::test]
async fn bad_input_is_answered_not_ignored() {
    let srv = server().await;
    let id = srv.create(paused(50.0)).await;
    let mut ws = srv.connect(id).await;

    ws.send(Message::Text(r#"{"v":1,"kind":"adviceSubmit","client_ref":"x","label":"jump","confidence":1}"#.into()))
        .await
        .unwrap();
    let ack = wait_for(&mut ws, |b| match b {
        WireBody::AdviceAck(a) => Some(a.clone()),
        _ => None,
    })
    .await;
    assert_eq!(ack.status, AckStatus::Rejected);
    assert_eq!(ack.client_ref.as_deref(), Some("x"));

    send(
        &mut ws,
        WireBody::AdviceSubmit(AdviceSubmit {
            sentence: Some("go left".into()),
            gestures: Some(vec![Action::GoLeft; 2]),
            ..AdviceSubmit::default()
        }),
    )
    .await;
    let ack = wait_for(&mut ws, |b| match b {
        WireBody::AdviceAck(a) => Some(a.clone()),
        _ => None,
    })
    .await;
    assert_eq!(ack.status, AckStatus::Rejected);
    assert!(ack.reason.unwrap().contains('5'));

    ws.send(Message::Text("{not json".into())).await.unwrap();
    let err = wait_for(&mut ws, |b| match b {
        WireBody::Error(e) => Some(e.message.clone()),
        _ => None,
    })
    .await;
    assert!(err.contains("JSON"), "{err}");

    send(
        &mut ws,
        WireBody::ConfigUpdate(ConfigUpdate {
            pace: Some(-1.0),
            ..ConfigUpdate::default()
        }),
    )
    .await;
    let err = wait_for(&mut ws, |b| match b {
        WireBody::Error(e) => Some(e.message.clone()),
        _ => None,
    })
    .await;
    assert!(err.contains("pace"), "{err}");
}

#[tokio::test]
async fn unknown_sessions_and_bad_configs() {
    let srv = server().await;
    let (status, body) = srv.http("GET", "/session/999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["message"].as_str().unwrap().contains("999"));

    let url = format!("ws://{}/session/999/ws", srv.addr);
    assert!(tokio_tungstenite::connect_async(url).await.is_err());

    let (status, _) = srv.http("POST", "/session", Some(r#"{"pace":0}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = srv.http("POST", "/session", Some(r#"{"bogus":1}"#)).await;
    assert!(status.is_client_error());

    let (status, body) = srv.http("POST", "/session", None).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["config"]["condition"], "irl-aff");
    assert_eq!(body["v"], WIRE_VERSION);
}
