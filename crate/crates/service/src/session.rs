//! A single live learning session, independent of any transport.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use affordance_irl::affordance::FailurePredictor;
use affordance_irl::experiment::Condition;
use affordance_irl::fusion::{audio_recognize, gesture_recognize, integrate, CommandLexicon, IntegratedFeedback};
use affordance_irl::learner::{AdviceSource, Agent, AgentRng, EpisodeEnd, LearnerConfig};
use affordance_irl::scenario::{Next, StateSpace, WorldState};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::wire::{
    AckStatus, AdviceAck, AdviceSubmit, ConfigUpdate, EpisodeEndMessage, StateUpdate, StepOutcome,
    WireBody,
};
use crate::ServiceError;

/// Entries kept for snapshot history.
const HISTORY: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub condition: Condition,
    /// `feedback_probability` is ignored: live advice is used whenever present.
    pub learner: LearnerConfig,
    pub seed: u64,
    /// Steps per second.
    pub pace: f64,
    pub max_episodes: usize,
    pub start_paused: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            condition: Condition::IrlAff,
            learner: LearnerConfig::default(),
            seed: 7,
            pace: 2.0,
            max_episodes: 500,
            start_paused: false,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ServiceError> {
        self.learner.validate()?;
        if !(self.pace.is_finite() && self.pace > 0.0) {
            return Err(ServiceError::Config(format!("pace must be positive, got {}", self.pace)));
        }
        if self.max_episodes == 0 {
            return Err(ServiceError::Config("max_episodes must be at least 1".into()));
        }
        Ok(())
    }

    fn effective_learner(&self) -> LearnerConfig {
        LearnerConfig {
            use_feedback: self.condition.uses_feedback(),
            use_affordances: self.condition.uses_affordances(),
            ..self.learner.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Pending {
    id: u64,
    feedback: IntegratedFeedback,
}

#[derive(Debug)]
struct Slot {
    pending: Option<Pending>,
    next_id: u64,
    /// Session step at which the learner next consults the mailbox.
    next_advice_step: u64,
}

/// Hands advice from the transport to the learner. Holds at most one item;
/// a newer submission replaces the waiting one.
#[derive(Debug)]
pub struct Mailbox {
    slot: Mutex<Slot>,
}

/// Result of placing advice in the mailbox.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Posted {
    pub id: u64,
    pub queued_at_step: u64,
    pub superseded: Option<u64>,
}

impl Mailbox {
    pub fn new() -> Mailbox {
        Mailbox {
            slot: Mutex::new(Slot {
                pending: None,
                next_id: 1,
                next_advice_step: 1,
            }),
        }
    }

    pub fn post(&self, feedback: IntegratedFeedback) -> Posted {
        let mut slot = self.slot.lock().expect("mailbox lock");
        let id = slot.next_id;
        slot.next_id += 1;
        let superseded = slot.pending.replace(Pending { id, feedback }).map(|p| p.id);
        Posted {
            id,
            queued_at_step: slot.next_advice_step,
            superseded,
        }
    }

    pub fn pending_id(&self) -> Option<u64> {
        self.slot.lock().expect("mailbox lock").pending.map(|p| p.id)
    }

    /// Called by the learner at its advice point.
    fn collect(&self) -> Option<Pending> {
        let mut slot = self.slot.lock().expect("mailbox lock");
        slot.next_advice_step += 1;
        slot.pending.take()
    }
}

impl Default for Mailbox {
    fn default() -> Self {
        Mailbox::new()
    }
}

/// Advice source reading the mailbox instead of sampling a trainer.
struct LiveAdvice<'a> {
    mailbox: &'a Mailbox,
    taken: Option<Pending>,
}

impl AdviceSource for LiveAdvice<'_> {
    fn advice(&mut self, _: &WorldState, _: &mut AgentRng) -> Option<IntegratedFeedback> {
        self.taken = self.mailbox.collect();
        self.taken.map(|p| p.feedback)
    }
}

/// Validates and fuses a submission into feedback, or explains why not.
pub fn fuse_submission(
    submit: &AdviceSubmit,
    lexicon: &CommandLexicon,
) -> Result<(IntegratedFeedback, Option<AdviceAckParts>), String> {
    match (submit, submit.label.is_some() || submit.confidence.is_some()) {
        (
            AdviceSubmit {
                sentence: Some(sentence),
                gestures: Some(gestures),
                ..
            },
            false,
        ) => {
            let audio = audio_recognize(&[sentence], lexicon).map_err(|e| e.to_string())?;
            let vision = gesture_recognize(gestures).map_err(|e| e.to_string())?;
            Ok((integrate(&audio, &vision), Some(AdviceAckParts { audio, vision })))
        }
        (
            AdviceSubmit {
                sentence: None,
                gestures: None,
                label: Some(label),
                confidence: Some(confidence),
                ..
            },
            true,
        ) => {
            if !(0.0..=1.0).contains(confidence) {
                return Err(format!("confidence must lie in [0, 1], got {confidence}"));
            }
            Ok((IntegratedFeedback::direct(*label, *confidence), None))
        }
        _ => Err("advice needs either `sentence` and `gestures`, or `label` and `confidence`".into()),
    }
}

/// Uni-modal recognitions behind raw advice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdviceAckParts {
    pub audio: affordance_irl::fusion::UnimodalPrediction,
    pub vision: affordance_irl::fusion::UnimodalPrediction,
}

/// Read-only view of a session, served over HTTP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub v: u32,
    pub session_id: u64,
    pub config: SessionConfig,
    pub paused: bool,
    pub finished: bool,
    /// Episode in progress, or the next one to start; 1-based.
    pub episode: usize,
    pub step: u64,
    pub step_in_episode: usize,
    pub state: Option<WorldState>,
    pub last_reward: Option<f64>,
    /// Reward of every finished episode.
    pub episode_rewards: Vec<f64>,
    pub pending_advice: Option<u64>,
    pub recent_steps: Vec<StateUpdate>,
    pub recent_acks: Vec<AdviceAck>,
}

pub struct Session {
    id: u64,
    config: SessionConfig,
    agent: Agent,
    rng: AgentRng,
    mailbox: Mailbox,
    affordances: Option<Arc<dyn FailurePredictor>>,
    paused: bool,
    step: u64,
    last_reward: Option<f64>,
    episode_rewards: Vec<f64>,
    recent_steps: VecDeque<StateUpdate>,
    recent_acks: VecDeque<AdviceAck>,
}

impl Session {
    pub fn new(
        id: u64,
        config: SessionConfig,
        space: Arc<StateSpace>,
        affordances: Option<Arc<dyn FailurePredictor>>,
    ) -> Result<Session, ServiceError> {
        config.validate()?;
        if config.condition.uses_affordances() && affordances.is_none() {
            return Err(ServiceError::Config(format!(
                "condition {} needs an affordance model, and the server has none",
                config.condition
            )));
        }
        Ok(Session {
            id,
            agent: Agent::new(space, config.effective_learner()),
            rng: AgentRng::seed_from_u64(config.seed),
            mailbox: Mailbox::new(),
            affordances,
            paused: config.start_paused,
            step: 0,
            last_reward: None,
            episode_rewards: Vec::new(),
            recent_steps: VecDeque::new(),
            recent_acks: VecDeque::new(),
            config,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn mailbox(&self) -> &Mailbox {
        &self.mailbox
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn finished(&self) -> bool {
        self.agent.episodes_finished() >= self.config.max_episodes
    }

    pub fn accepts_advice(&self) -> bool {
        self.config.condition.uses_feedback()
    }

    /// Executes one step. Returns nothing once the session has finished.
    pub fn step(&mut self) -> Vec<WireBody> {
        if self.finished() {
            return Vec::new();
        }
        let episode = self.agent.episodes_finished() + 1;
        let step_in_episode = self.agent.steps_in_episode() + 1;
        let mut source = LiveAdvice {
            mailbox: &self.mailbox,
            taken: None,
        };
        let tick = self
            .agent
            .tick(&mut source, self.affordances.as_deref(), &mut self.rng);
        let taken = source.taken;
        self.step += 1;
        self.last_reward = Some(tick.record.reward);

        let r = tick.record;
        let outcome = match (tick.ended, r.next) {
            (Some(EpisodeEnd::Truncated), _) => StepOutcome::Truncated,
            (_, Next::Done) => StepOutcome::Done,
            (_, Next::Failed) => StepOutcome::Failed,
            (_, Next::State(_)) => StepOutcome::Continue,
        };
        let update = StateUpdate {
            session_id: self.id,
            episode,
            step: self.step,
            step_in_episode,
            state: r.state,
            state_code: r.state.to_string(),
            action: r.action,
            advice_id: taken.map(|p| p.id),
            advice_label: taken.map(|p| p.feedback.label),
            advice_confidence: r.advice_confidence,
            advice_used: r.advice_used,
            affordance_bypassed: r.affordance_bypassed,
            reward: r.reward,
            episode_reward: tick.episode_reward,
            next_state: r.next.state(),
            outcome,
        };
        push_bounded(&mut self.recent_steps, update.clone());
        let mut out = vec![WireBody::StateUpdate(update)];
        if let Some(end) = tick.ended {
            self.episode_rewards.push(tick.episode_reward);
            out.push(WireBody::EpisodeEnd(EpisodeEndMessage {
                session_id: self.id,
                episode,
                reward: tick.episode_reward,
                steps: step_in_episode,
                end,
            }));
        }
        out
    }

    /// Fuses and posts advice, returning every acknowledgement it causes:
    /// its own, and one for the submission it displaced.
    pub fn submit(&mut self, submit: &AdviceSubmit, lexicon: &CommandLexicon) -> Vec<AdviceAck> {
        let client_ref = submit.client_ref.clone();
        if !self.accepts_advice() {
            let ack = AdviceAck::rejected(
                client_ref,
                format!("condition {} does not take advice", self.config.condition),
            );
            push_bounded(&mut self.recent_acks, ack.clone());
            return vec![ack];
        }
        let (feedback, parts) = match fuse_submission(submit, lexicon) {
            Ok(f) => f,
            Err(reason) => {
                let ack = AdviceAck::rejected(client_ref, reason);
                push_bounded(&mut self.recent_acks, ack.clone());
                return vec![ack];
            }
        };
        let posted = self.mailbox.post(feedback);
        let mut acks = Vec::with_capacity(2);
        if let Some(old) = posted.superseded {
            let original = self
                .recent_acks
                .iter()
                .rev()
                .find(|a| a.advice_id == Some(old) && a.status == AckStatus::Queued);
            acks.push(AdviceAck {
                status: AckStatus::Superseded,
                advice_id: Some(old),
                client_ref: original.and_then(|a| a.client_ref.clone()),
                queued_at_step: None,
                feedback: original.and_then(|a| a.feedback),
                audio: None,
                vision: None,
                superseded_by: Some(posted.id),
                reason: Some("replaced by newer advice before the learner reached it".into()),
            });
        }
        acks.push(AdviceAck {
            status: AckStatus::Queued,
            advice_id: Some(posted.id),
            client_ref,
            queued_at_step: Some(posted.queued_at_step),
            feedback: Some(feedback),
            audio: parts.map(|p| p.audio),
            vision: parts.map(|p| p.vision),
            superseded_by: None,
            reason: None,
        });
        for a in &acks {
            push_bounded(&mut self.recent_acks, a.clone());
        }
        acks
    }

    /// Applies a client's settings change and returns the effective settings.
    pub fn apply(&mut self, update: &ConfigUpdate) -> Result<ConfigUpdate, ServiceError> {
        let mut config = self.config.clone();
        if let Some(t) = update.theta_min {
            config.learner.theta_min = t;
        }
        if let Some(e) = update.eta {
            config.learner.eta = e;
        }
        if let Some(e) = update.epsilon {
            config.learner.epsilon = e;
        }
        if let Some(p) = update.pace {
            config.pace = p;
        }
        config.validate()?;
        self.agent.cfg = config.effective_learner();
        self.config = config;
        if let Some(p) = update.paused {
            self.paused = p;
        }
        Ok(self.settings())
    }

    pub fn settings(&self) -> ConfigUpdate {
        ConfigUpdate {
            theta_min: Some(self.config.learner.theta_min),
            eta: Some(self.config.learner.eta),
            epsilon: Some(self.config.learner.epsilon),
            pace: Some(self.config.pace),
            paused: Some(self.paused),
        }
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            v: crate::wire::WIRE_VERSION,
            session_id: self.id,
            config: self.config.clone(),
            paused: self.paused,
            finished: self.finished(),
            episode: self.agent.episodes_finished() + 1,
            step: self.step,
            step_in_episode: self.agent.steps_in_episode(),
            state: self.agent.current_state(),
            last_reward: self.last_reward,
            episode_rewards: self.episode_rewards.clone(),
            pending_advice: self.mailbox.pending_id(),
            recent_steps: self.recent_steps.iter().cloned().collect(),
            recent_acks: self.recent_acks.iter().cloned().collect(),
        }
    }
}

fn push_bounded<T>(queue: &mut VecDeque<T>, item: T) {
    if queue.len() == HISTORY {
        queue.pop_front();
    }
    queue.push_back(item);
}
