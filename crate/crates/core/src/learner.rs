//! SARSA with interactive advice and affordance-gated action selection.
//!
//! Action selection runs in three stages:
//!
//! 1. If feedback is enabled, the advice source may hand over integrated
//!    feedback. Advice whose confidence exceeds `theta_min` becomes the
//!    candidate action outright.
//! 2. Otherwise the candidate is chosen ε-greedily from the Q-table.
//! 3. If affordances are enabled, with probability `eta` the candidate is
//!    checked against the effect model. A candidate predicted to fail is
//!    replaced by the best non-failing action (or a random one when the
//!    candidate was exploratory).
//!
//! The learner is driven one step at a time by [`Agent::tick`]. The SARSA
//! update for a transition is applied once the next action has been chosen,
//! which yields exactly the textbook on-policy update order.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advisor::{AdviceEvent, Advisor, ChannelNoise};
use crate::affordance::FailurePredictor;
use crate::error::{Error, Result};
use crate::fusion::IntegratedFeedback;
use crate::scenario::{self, argmax, Action, Location, Next, StateSpace, WorldState};

/// Random stream owned by one agent.
pub type AgentRng = ChaCha8Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Chance per step that the simulated trainer offers advice.
    pub feedback_probability: f64,
    /// Advice is used only when its integrated confidence is strictly above.
    pub theta_min: f64,
    /// Chance per step that the affordance check is applied.
    pub eta: f64,
    pub use_feedback: bool,
    pub use_affordances: bool,
    pub max_steps_per_episode: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            alpha: 0.3,
            gamma: 0.9,
            epsilon: 0.1,
            feedback_probability: 0.3,
            theta_min: 0.25,
            eta: 1.0,
            use_feedback: false,
            use_affordances: false,
            max_steps_per_episode: 100,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("epsilon", self.epsilon),
            ("feedback_probability", self.feedback_probability),
            ("theta_min", self.theta_min),
            ("eta", self.eta),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.max_steps_per_episode == 0 {
            return Err(Error::Config("max_steps_per_episode must be at least 1".into()));
        }
        Ok(())
    }
}

/// Tabular action values over the enumerated states. Unknown states read 0.
#[derive(Clone, Debug)]
pub struct QTable {
    space: Arc<StateSpace>,
    values: Vec<[f64; 7]>,
}

impl QTable {
    pub fn new(space: Arc<StateSpace>) -> QTable {
        let values = vec![[0.0; 7]; space.len()];
        QTable { space, values }
    }

    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    pub fn get(&self, s: &WorldState, a: Action) -> f64 {
        self.space
            .index_of(s)
            .map_or(0.0, |i| self.values[i][a.index()])
    }

    pub fn row(&self, s: &WorldState) -> [f64; 7] {
        self.space.index_of(s).map_or([0.0; 7], |i| self.values[i])
    }

    pub fn set(&mut self, s: &WorldState, a: Action, value: f64) -> Result<()> {
        let i = self
            .space
            .index_of(s)
            .ok_or_else(|| Error::UnknownState(s.to_string()))?;
        self.values[i][a.index()] = value;
        Ok(())
    }

    /// First action with the highest value.
    pub fn greedy(&self, s: &WorldState) -> Action {
        Action::ALL[argmax(&self.row(s))]
    }

    pub fn values(&self) -> &[[f64; 7]] {
        &self.values
    }
}

/// Where advice comes from during action selection.
pub trait AdviceSource {
    /// Advice for `state`, if any is offered at this step.
    fn advice(&mut self, state: &WorldState, rng: &mut AgentRng) -> Option<IntegratedFeedback>;
}

/// Never advises.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoAdvice;

impl AdviceSource for NoAdvice {
    fn advice(&mut self, _: &WorldState, _: &mut AgentRng) -> Option<IntegratedFeedback> {
        None
    }
}

/// The simulated trainer, offering advice with a fixed probability per step.
pub struct SimulatedTrainer {
    advisor: Arc<Advisor>,
    noise: ChannelNoise,
    probability: f64,
    /// Most recent advice event, for logging.
    pub last_event: Option<AdviceEvent>,
}

impl SimulatedTrainer {
    pub fn new(advisor: Arc<Advisor>, noise: ChannelNoise, probability: f64) -> SimulatedTrainer {
        SimulatedTrainer {
            advisor,
            noise,
            probability,
            last_event: None,
        }
    }
}

impl AdviceSource for SimulatedTrainer {
    fn advice(&mut self, state: &WorldState, rng: &mut AgentRng) -> Option<IntegratedFeedback> {
        if rng.random::<f64>() >= self.probability {
            return None;
        }
        let event = self.advisor.emit_advice(state, &self.noise, rng).ok()?;
        let fused = event.fused;
        self.last_event = Some(event);
        Some(fused)
    }
}

/// Outcome of action selection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub action: Action,
    /// Advice offered at this step, whether or not it passed the gate.
    pub advice: Option<IntegratedFeedback>,
    pub advice_used: bool,
    pub explored: bool,
    pub affordance_checked: bool,
    pub affordance_bypassed: bool,
}

pub fn select_action(
    q: &QTable,
    state: &WorldState,
    cfg: &LearnerConfig,
    source: &mut dyn AdviceSource,
    affordances: Option<&dyn FailurePredictor>,
    rng: &mut AgentRng,
) -> Selection {
    let mut sel = Selection {
        action: Action::GoLeft,
        advice: None,
        advice_used: false,
        explored: false,
        affordance_checked: false,
        affordance_bypassed: false,
    };

    if cfg.use_feedback {
        sel.advice = source.advice(state, rng);
        if let Some(advice) = sel.advice {
            if advice.confidence > cfg.theta_min {
                sel.action = advice.label;
                sel.advice_used = true;
            }
        }
    }

    if !sel.advice_used {
        if rng.random::<f64>() < cfg.epsilon {
            sel.action = Action::ALL[rng.random_range(0..Action::ALL.len())];
            sel.explored = true;
        } else {
            sel.action = q.greedy(state);
        }
    }

    if let (true, Some(model)) = (cfg.use_affordances, affordances) {
        if rng.random::<f64>() < cfg.eta {
            sel.affordance_checked = true;
            if model.predicts_failure(state, sel.action) {
                let safe: Vec<Action> = Action::ALL
                    .into_iter()
                    .filter(|a| !model.predicts_failure(state, *a))
                    .collect();
                if !safe.is_empty() {
                    sel.action = if sel.explored {
                        safe[rng.random_range(0..safe.len())]
                    } else {
                        let row = q.row(state);
                        let values: Vec<f64> = safe.iter().map(|a| row[a.index()]).collect();
                        safe[argmax(&values)]
                    };
                    sel.affordance_bypassed = true;
                }
            }
        }
    }
    sel
}

/// `q(s,a) += α (r + γ q(s',a') - q(s,a))`, with a zero bootstrap when the
/// transition ended the episode (`next` is `None`).
pub fn sarsa_update(
    q: &mut QTable,
    state: &WorldState,
    action: Action,
    reward: f64,
    next: Option<(&WorldState, Action)>,
    cfg: &LearnerConfig,
) {
    let bootstrap = next.map_or(0.0, |(s, a)| q.get(s, a));
    let Some(i) = q.space.index_of(state) else {
        return;
    };
    let old = q.values[i][action.index()];
    q.values[i][action.index()] = old + cfg.alpha * (reward + cfg.gamma * bootstrap - old);
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: WorldState,
    pub action: Action,
    pub advice_used: bool,
    pub affordance_bypassed: bool,
    /// Integrated confidence of the advice offered at this step, if any.
    pub advice_confidence: Option<f64>,
    pub reward: f64,
    pub next: Next,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeEnd {
    Done,
    Failed,
    Truncated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    /// Undiscounted sum of the step rewards.
    pub reward: f64,
    pub steps: usize,
    pub end: EpisodeEnd,
    pub trace: Vec<StepRecord>,
}

#[derive(Clone, Copy, Debug)]
struct Pending {
    state: WorldState,
    action: Action,
    reward: f64,
}

#[derive(Clone, Copy, Debug)]
struct Episode {
    origin: Location,
    state: WorldState,
    steps: usize,
    reward: f64,
}

/// Result of one [`Agent::tick`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tick {
    pub record: StepRecord,
    /// Set when this step ended the episode.
    pub ended: Option<EpisodeEnd>,
    pub episode_reward: f64,
}

/// A learner stepping through episodes one action at a time.
#[derive(Clone, Debug)]
pub struct Agent {
    pub q: QTable,
    pub cfg: LearnerConfig,
    episode: Option<Episode>,
    pending: Option<Pending>,
    episodes_finished: usize,
}

impl Agent {
    pub fn new(space: Arc<StateSpace>, cfg: LearnerConfig) -> Agent {
        Agent {
            q: QTable::new(space),
            cfg,
            episode: None,
            pending: None,
            episodes_finished: 0,
        }
    }

    pub fn with_q(q: QTable, cfg: LearnerConfig) -> Agent {
        Agent {
            q,
            cfg,
            episode: None,
            pending: None,
            episodes_finished: 0,
        }
    }

    /// Starts a new episode with the goblet on a uniformly drawn side.
    pub fn begin_episode(&mut self, rng: &mut AgentRng) -> WorldState {
        let origin = if rng.random::<f64>() < 0.5 {
            Location::Left
        } else {
            Location::Right
        };
        self.begin_episode_at(origin)
    }

    pub fn begin_episode_at(&mut self, origin: Location) -> WorldState {
        let state = WorldState::initial(origin).expect("origin is a table side");
        self.episode = Some(Episode {
            origin,
            state,
            steps: 0,
            reward: 0.0,
        });
        self.pending = None;
        state
    }

    pub fn in_episode(&self) -> bool {
        self.episode.is_some()
    }

    pub fn current_state(&self) -> Option<WorldState> {
        self.episode.map(|e| e.state)
    }

    pub fn episodes_finished(&self) -> usize {
        self.episodes_finished
    }

    pub fn steps_in_episode(&self) -> usize {
        self.episode.map_or(0, |e| e.steps)
    }

    /// Selects and executes one action, applying every SARSA update that
    /// became possible. Starts an episode first if none is running.
    pub fn tick(
        &mut self,
        source: &mut dyn AdviceSource,
        affordances: Option<&dyn FailurePredictor>,
        rng: &mut AgentRng,
    ) -> Tick {
        if self.episode.is_none() {
            self.begin_episode(rng);
        }
        let mut ep = self.episode.expect("episode running");
        let sel = select_action(&self.q, &ep.state, &self.cfg, source, affordances, rng);
        self.execute(&mut ep, sel)
    }

    /// Executes `action` as if it had been selected, with no advice involved.
    pub fn tick_with(&mut self, action: Action, rng: &mut AgentRng) -> Tick {
        if self.episode.is_none() {
            self.begin_episode(rng);
        }
        let mut ep = self.episode.expect("episode running");
        let sel = Selection {
            action,
            advice: None,
            advice_used: false,
            explored: false,
            affordance_checked: false,
            affordance_bypassed: false,
        };
        self.execute(&mut ep, sel)
    }

    fn execute(&mut self, ep: &mut Episode, sel: Selection) -> Tick {
        let state = ep.state;
        let action = sel.action;
        if let Some(p) = self.pending.take() {
            sarsa_update(&mut self.q, &p.state, p.action, p.reward, Some((&state, action)), &self.cfg);
        }
        let t = scenario::step(&state, action, ep.origin);
        ep.steps += 1;
        ep.reward += t.reward;
        let record = StepRecord {
            state,
            action,
            advice_used: sel.advice_used,
            affordance_bypassed: sel.affordance_bypassed,
            advice_confidence: sel.advice.map(|a| a.confidence),
            reward: t.reward,
            next: t.next,
        };
        let ended = match t.next {
            Next::Done | Next::Failed => {
                sarsa_update(&mut self.q, &state, action, t.reward, None, &self.cfg);
                Some(if t.next == Next::Done {
                    EpisodeEnd::Done
                } else {
                    EpisodeEnd::Failed
                })
            }
            Next::State(next) if ep.steps >= self.cfg.max_steps_per_episode => {
                // No further action is taken; bootstrap from the greedy action.
                let greedy = self.q.greedy(&next);
                sarsa_update(&mut self.q, &state, action, t.reward, Some((&next, greedy)), &self.cfg);
                Some(EpisodeEnd::Truncated)
            }
            Next::State(next) => {
                self.pending = Some(Pending {
                    state,
                    action,
                    reward: t.reward,
                });
                ep.state = next;
                None
            }
        };
        let episode_reward = ep.reward;
        if ended.is_some() {
            self.episode = None;
            self.pending = None;
            self.episodes_finished += 1;
        } else {
            self.episode = Some(*ep);
        }
        Tick {
            record,
            ended,
            episode_reward,
        }
    }

    /// Runs a fresh episode to completion.
    pub fn run_episode(
        &mut self,
        source: &mut dyn AdviceSource,
        affordances: Option<&dyn FailurePredictor>,
        rng: &mut AgentRng,
    ) -> EpisodeOutcome {
        self.begin_episode(rng);
        let mut trace = Vec::new();
        loop {
            let tick = self.tick(source, affordances, rng);
            trace.push(tick.record);
            if let Some(end) = tick.ended {
                return EpisodeOutcome {
                    reward: tick.episode_reward,
                    steps: trace.len(),
                    end,
                    trace,
                };
            }
        }
    }
}
