//! JSON messages exchanged over the session socket.
//!
//! Every message is an object with a schema version `v` and a `kind`; the
//! remaining fields depend on the kind. Field names are snake_case, kind
//! names camelCase.

use affordance_irl::fusion::{IntegratedFeedback, UnimodalPrediction};
use affordance_irl::learner::EpisodeEnd;
use affordance_irl::scenario::{Action, WorldState};
use serde::{Deserialize, Serialize};

pub const WIRE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub v: u32,
    #[serde(flatten)]
    pub body: WireBody,
}

impl From<WireBody> for WireMessage {
    fn from(body: WireBody) -> Self {
        WireMessage {
            v: WIRE_VERSION,
            body,
        }
    }
}

impl WireMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum WireBody {
    StateUpdate(StateUpdate),
    AdviceSubmit(AdviceSubmit),
    AdviceAck(AdviceAck),
    EpisodeEnd(EpisodeEndMessage),
    ConfigUpdate(ConfigUpdate),
    Error(ErrorMessage),
}

/// How a step ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Continue,
    Done,
    Failed,
    Truncated,
}

/// One executed step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateUpdate {
    pub session_id: u64,
    /// 1-based episode number.
    pub episode: usize,
    /// 1-based step number over the whole session.
    pub step: u64,
    pub step_in_episode: usize,
    /// State the action was taken in.
    pub state: WorldState,
    pub state_code: String,
    pub action: Action,
    /// Id of the advice consumed at this step, if any.
    pub advice_id: Option<u64>,
    pub advice_label: Option<Action>,
    pub advice_confidence: Option<f64>,
    pub advice_used: bool,
    pub affordance_bypassed: bool,
    pub reward: f64,
    pub episode_reward: f64,
    pub next_state: Option<WorldState>,
    pub outcome: StepOutcome,
}

/// Advice from the trainer: either raw channels, fused on the server, or a
/// ready (label, confidence) pair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdviceSubmit {
    /// Echoed back in the acknowledgement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence: Option<String>,
    /// Exactly five per-frame gesture labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gestures: Option<Vec<Action>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl AdviceSubmit {
    pub fn raw(sentence: &str, gestures: [Action; 5]) -> AdviceSubmit {
        AdviceSubmit {
            sentence: Some(sentence.to_string()),
            gestures: Some(gestures.to_vec()),
            ..AdviceSubmit::default()
        }
    }

    pub fn direct(label: Action, confidence: f64) -> AdviceSubmit {
        AdviceSubmit {
            label: Some(label),
            confidence: Some(confidence),
            ..AdviceSubmit::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckStatus {
    /// Waiting in the mailbox for the step given by `queued_at_step`.
    Queued,
    /// Replaced by a newer submission before it was offered to the learner.
    Superseded,
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdviceAck {
    pub status: AckStatus,
    pub advice_id: Option<u64>,
    pub client_ref: Option<String>,
    pub queued_at_step: Option<u64>,
    pub feedback: Option<IntegratedFeedback>,
    pub audio: Option<UnimodalPrediction>,
    pub vision: Option<UnimodalPrediction>,
    pub superseded_by: Option<u64>,
    pub reason: Option<String>,
}

impl AdviceAck {
    pub fn rejected(client_ref: Option<String>, reason: impl Into<String>) -> AdviceAck {
        AdviceAck {
            status: AckStatus::Rejected,
            advice_id: None,
            client_ref,
            queued_at_step: None,
            feedback: None,
            audio: None,
            vision: None,
            superseded_by: None,
            reason: Some(reason.into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEndMessage {
    pub session_id: u64,
    pub episode: usize,
    pub reward: f64,
    pub steps: usize,
    pub end: EpisodeEnd,
}

/// Sent by a client to change a running session, and by the server with
/// every field filled in to announce the effective settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigUpdate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Steps per second.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pace: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paused: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMessage {
    pub message: String,
}

/// What a client sent, after validation of the envelope.
#[derive(Debug)]
pub enum Incoming {
    Advice(AdviceSubmit),
    Config(ConfigUpdate),
    /// Advice that could not be decoded, with the reason and any client ref.
    BadAdvice(Option<String>, String),
    Invalid(String),
}

/// Decodes a client message. Malformed advice is told apart from other
/// malformed input so that it can be answered with a rejection ack.
pub fn parse_incoming(text: &str) -> Incoming {
    let value: serde_json::Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return Incoming::Invalid(format!("not JSON: {e}")),
    };
    let Some(obj) = value.as_object() else {
        return Incoming::Invalid("message must be a JSON object".into());
    };
    match obj.get("v").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(WIRE_VERSION) => {}
        Some(v) => return Incoming::Invalid(format!("unsupported version {v}, expected {WIRE_VERSION}")),
        None => return Incoming::Invalid("missing version field `v`".into()),
    }
    let mut fields = obj.clone();
    fields.remove("v");
    let kind = fields.remove("kind");
    let fields = serde_json::Value::Object(fields);
    match kind.as_ref().and_then(|k| k.as_str()) {
        Some("adviceSubmit") => match serde_json::from_value::<AdviceSubmit>(fields.clone()) {
            Ok(a) => Incoming::Advice(a),
            Err(e) => {
                let client_ref = fields
                    .get("client_ref")
                    .and_then(|r| r.as_str())
                    .map(str::to_string);
                Incoming::BadAdvice(client_ref, e.to_string())
            }
        },
        Some("configUpdate") => match serde_json::from_value::<ConfigUpdate>(fields) {
            Ok(c) => Incoming::Config(c),
            Err(e) => Incoming::Invalid(format!("bad configUpdate: {e}")),
        },
        Some(other) => Incoming::Invalid(format!("clients cannot send `{other}`")),
        None => Incoming::Invalid("missing `kind`".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_shape() {
        let msg: WireMessage = WireBody::Error(ErrorMessage {
            message: "x".into(),
        })
        .into();
        let json: serde_json::Value = serde_json::from_str(&msg.to_json()).unwrap();
        assert_eq!(json["v"], 1);
        assert_eq!(json["kind"], "error");
        assert_eq!(serde_json::from_value::<WireMessage>(json).unwrap(), msg);
    }

    #[test]
    fn submit_round_trip() {
        let msg: WireMessage = WireBody::AdviceSubmit(AdviceSubmit::raw("go left", [Action::GoLeft; 5])).into();
        let text = msg.to_json();
        assert!(text.contains(r#""kind":"adviceSubmit""#));
        assert!(text.contains(r#""gestures":["go_left","go_left","go_left","go_left","go_left"]"#));
        match parse_incoming(&text) {
            Incoming::Advice(a) => assert_eq!(a.sentence.as_deref(), Some("go left")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_advice_keeps_its_reference() {
        let text = r#"{"v":1,"kind":"adviceSubmit","client_ref":"c7","label":"fly"}"#;
        match parse_incoming(text) {
            Incoming::BadAdvice(r, reason) => {
                assert_eq!(r.as_deref(), Some("c7"));
                assert!(reason.contains("fly"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn envelope_errors() {
        for text in [
            "nonsense",
            "[1]",
            r#"{"kind":"adviceSubmit"}"#,
            r#"{"v":2,"kind":"adviceSubmit"}"#,
            r#"{"v":1}"#,
            r#"{"v":1,"kind":"stateUpdate"}"#,
            r#"{"v":1,"kind":"configUpdate","speed":3}"#,
        ] {
            assert!(matches!(parse_incoming(text), Incoming::Invalid(_)), "{text}");
        }
    }
}
