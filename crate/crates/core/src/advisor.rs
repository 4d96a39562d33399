//! A simulated parent-like trainer.
//!
//! The trainer always means well: it intends the optimal action for the
//! current state. What reaches the learner is that intent after passing
//! through two noisy channels, a speech channel that garbles characters of
//! the command sentence and a gesture channel that mislabels frames, and
//! through the recognizers and their fusion.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{
    audio_recognize, gesture_recognize, integrate, CommandLexicon, IntegratedFeedback,
    UnimodalPrediction, GESTURE_WINDOW,
};
use crate::scenario::{Action, OptimalPolicy, StateSpace, WorldState};

/// Corruption applied to the trainer's speech and gestures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelNoise {
    /// Probability that a character of the spoken sentence is replaced by a
    /// random lowercase letter.
    pub audio_char_error_rate: f64,
    /// Probability that a gesture frame carries a wrong label.
    pub vision_label_error_rate: f64,
    /// Size of the recognizer's n-best list.
    pub hypothesis_count: usize,
}

impl Default for ChannelNoise {
    fn default() -> Self {
        ChannelNoise {
            audio_char_error_rate: 0.05,
            vision_label_error_rate: 0.2,
            hypothesis_count: 10,
        }
    }
}

impl ChannelNoise {
    pub const NONE: ChannelNoise = ChannelNoise {
        audio_char_error_rate: 0.0,
        vision_label_error_rate: 0.0,
        hypothesis_count: 10,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("audio_char_error_rate", self.audio_char_error_rate),
            ("vision_label_error_rate", self.vision_label_error_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {rate}")));
            }
        }
        if self.hypothesis_count == 0 {
            return Err(Error::Config("hypothesis_count must be at least 1".into()));
        }
        Ok(())
    }
}

/// One piece of advice as it travelled from intent to fused feedback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdviceEvent {
    pub intended: Action,
    pub audio: UnimodalPrediction,
    pub vision: UnimodalPrediction,
    pub fused: IntegratedFeedback,
}

#[derive(Clone, Debug)]
pub struct Advisor {
    policy: OptimalPolicy,
    lexicon: CommandLexicon,
}

impl Advisor {
    pub fn new(space: &StateSpace, lexicon: CommandLexicon) -> Advisor {
        Advisor {
            policy: OptimalPolicy::solve(space, 0.9),
            lexicon,
        }
    }

    pub fn lexicon(&self) -> &CommandLexicon {
        &self.lexicon
    }

    pub fn policy(&self) -> &OptimalPolicy {
        &self.policy
    }

    /// The action the trainer wants the agent to take.
    pub fn intended_advice(&self, state: &WorldState) -> Result<Action> {
        if state.is_final() {
            return Err(Error::TerminalState);
        }
        self.policy
            .action(state)
            .ok_or_else(|| Error::UnknownState(state.to_string()))
    }

    pub fn emit_advice<R: Rng + ?Sized>(
        &self,
        state: &WorldState,
        noise: &ChannelNoise,
        rng: &mut R,
    ) -> Result<AdviceEvent> {
        let intended = self.intended_advice(state)?;
        let sentence = self.lexicon.sentence(intended);
        let hypotheses: Vec<String> = (0..noise.hypothesis_count.max(1))
            .map(|_| garble(sentence, noise.audio_char_error_rate, rng))
            .collect();
        let audio = audio_recognize(&hypotheses, &self.lexicon)?;

        let window: Vec<Action> = (0..GESTURE_WINDOW)
            .map(|_| noisy_label(intended, noise.vision_label_error_rate, rng))
            .collect();
        let vision = gesture_recognize(&window)?;

        Ok(AdviceEvent {
            intended,
            audio,
            vision,
            fused: integrate(&audio, &vision),
        })
    }
}

/// Replaces each character with a random lowercase letter with probability
/// `rate`. Length is preserved.
fn garble<R: Rng + ?Sized>(sentence: &str, rate: f64, rng: &mut R) -> String {
    sentence
        .chars()
        .map(|c| {
            if rng.random::<f64>() < rate {
                char::from(b'a' + rng.random_range(0..26u8))
            } else {
                c
            }
        })
        .collect()
}

/// The intended label, or with probability `rate` a uniformly drawn other one.
fn noisy_label<R: Rng + ?Sized>(intended: Action, rate: f64, rng: &mut R) -> Action {
    if rng.random::<f64>() < rate {
        let offset = rng.random_range(1..Action::ALL.len());
        Action::ALL[(intended.index() + offset) % Action::ALL.len()]
    } else {
        intended
    }
}

/// Writes advice events as JSON lines.
pub fn write_advice_log<W: Write>(events: &[AdviceEvent], mut out: W) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
