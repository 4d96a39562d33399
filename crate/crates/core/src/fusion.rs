//! Uni-modal recognizers and their audio-visual integration.
//!
//! Speech is matched against a fixed command lexicon by edit distance; the
//! best-matching sentence becomes the audio label and its normalized distance
//! the audio confidence. Gestures arrive as a window of per-frame labels whose
//! mode is the vision label and whose relative frequency is the vision
//! confidence. The two are fused into one label plus a confidence that grows
//! when the channels agree and shrinks when they contradict each other.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Action;

/// Frames per gesture window.
pub const GESTURE_WINDOW: usize = 5;

/// `ln(1 + φ)` peaks at `φ = 2`; dividing by this maps it onto `[0, 1]`.
fn rescale() -> f64 {
    3.0_f64.ln()
}

/// In-domain command sentences, one per action in [`Action::ALL`] order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandLexicon {
    sentences: Vec<String>,
}

impl Default for CommandLexicon {
    fn default() -> Self {
        CommandLexicon {
            sentences: ["go left", "go right", "go home", "grasp", "place", "wipe", "abort"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

impl CommandLexicon {
    pub fn new<I, S>(sentences: I) -> Result<CommandLexicon>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sentences: Vec<String> = sentences.into_iter().map(Into::into).collect();
        if sentences.len() != Action::ALL.len() {
            return Err(Error::Lexicon(format!(
                "expected {} sentences, got {}",
                Action::ALL.len(),
                sentences.len()
            )));
        }
        for (i, s) in sentences.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Lexicon(format!("sentence {} is empty", i + 1)));
            }
            if sentences[..i].contains(s) {
                return Err(Error::Lexicon(format!("duplicate sentence `{s}`")));
            }
        }
        Ok(CommandLexicon { sentences })
    }

    /// Reads one sentence per line; blank lines are skipped.
    pub fn parse(text: &str) -> Result<CommandLexicon> {
        CommandLexicon::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CommandLexicon> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        CommandLexicon::parse(&text)
    }

    pub fn sentence(&self, action: Action) -> &str {
        &self.sentences[action.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Action, &str)> {
        Action::ALL.into_iter().zip(self.sentences.iter().map(String::as_str))
    }
}

/// Character-level edit distance (unit cost insert, delete, substitute).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if ca == *cb {
                diag
            } else {
                1 + diag.min(above).min(row[j])
            };
            diag = above;
        }
    }
    row[b.len()]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Audio,
    Vision,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnimodalPrediction {
    pub label: Action,
    pub confidence: f64,
    pub modality: Modality,
}

/// Picks the lexicon sentence closest to any hypothesis.
///
/// Ties go to the earlier sentence, then to the earlier hypothesis. The
/// confidence is `max(0, 1 - d / |s|)` with `|s|` counted in characters.
pub fn audio_recognize<S: AsRef<str>>(
    hypotheses: &[S],
    lexicon: &CommandLexicon,
) -> Result<UnimodalPrediction> {
    if hypotheses.is_empty() {
        return Err(Error::NoHypotheses);
    }
    let mut best: Option<(usize, Action, usize)> = None;
    for (action, sentence) in lexicon.iter() {
        for h in hypotheses {
            let d = levenshtein(h.as_ref(), sentence);
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, action, sentence.chars().count()));
            }
        }
    }
    let (distance, label, len) = best.expect("non-empty hypotheses and lexicon");
    Ok(UnimodalPrediction {
        label,
        confidence: (1.0 - distance as f64 / len as f64).max(0.0),
        modality: Modality::Audio,
    })
}

/// Mode of the last [`GESTURE_WINDOW`] frame labels.
///
/// Equal counts resolve to the label seen most recently. The confidence is the
/// mode's share of the window, so it is one of 0.2, 0.4, ..., 1.0.
pub fn gesture_recognize(window: &[Action]) -> Result<UnimodalPrediction> {
    if window.len() != GESTURE_WINDOW {
        return Err(Error::WindowLength {
            expected: GESTURE_WINDOW,
            got: window.len(),
        });
    }
    let mut counts = [0usize; 7];
    let mut last_seen = [0usize; 7];
    for (i, a) in window.iter().enumerate() {
        counts[a.index()] += 1;
        last_seen[a.index()] = i;
    }
    let label = *window
        .iter()
        .max_by_key(|a| (counts[a.index()], last_seen[a.index()]))
        .expect("window is non-empty");
    Ok(UnimodalPrediction {
        label,
        confidence: counts[label.index()] as f64 / GESTURE_WINDOW as f64,
        modality: Modality::Vision,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratedFeedback {
    pub label: Action,
    pub confidence: f64,
    pub likeliness: f64,
    pub congruent: bool,
}

impl IntegratedFeedback {
    /// Advice given directly as a (label, confidence) pair, bypassing the
    /// recognizers. The confidence is clamped to `[0, 1]`.
    pub fn direct(label: Action, confidence: f64) -> IntegratedFeedback {
        let confidence = confidence.clamp(0.0, 1.0);
        IntegratedFeedback {
            label,
            confidence,
            likeliness: 3.0_f64.powf(confidence) - 1.0,
            congruent: true,
        }
    }
}

/// Integrated confidence for a likeliness value.
pub fn integrated_confidence(likeliness: f64) -> f64 {
    (1.0 + likeliness).ln() / rescale()
}

/// Fuses an audio and a vision prediction.
///
/// The label comes from the more confident channel, with vision winning ties.
/// The likeliness is the confidence sum for agreeing labels and the absolute
/// difference otherwise.
pub fn integrate(audio: &UnimodalPrediction, vision: &UnimodalPrediction) -> IntegratedFeedback {
    debug_assert_eq!(audio.modality, Modality::Audio);
    debug_assert_eq!(vision.modality, Modality::Vision);
    let label = if audio.confidence > vision.confidence {
        audio.label
    } else {
        vision.label
    };
    let congruent = audio.label == vision.label;
    let likeliness = if congruent {
        audio.confidence + vision.confidence
    } else {
        (audio.confidence - vision.confidence).abs()
    };
    IntegratedFeedback {
        label,
        confidence: integrated_confidence(likeliness),
        likeliness,
        congruent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn audio(label: Action, confidence: f64) -> UnimodalPrediction {
        UnimodalPrediction {
            label,
            confidence,
            modality: Modality::Audio,
        }
    }

    fn vision(label: Action, confidence: f64) -> UnimodalPrediction {
        UnimodalPrediction {
            label,
            confidence,
            modality: Modality::Vision,
        }
    }

    // Plain recursive definition, exponential but fine for short strings.
    fn edit_distance_oracle(a: &[char], b: &[char]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((ha, ta)), Some((hb, tb))) => {
                let sub = edit_distance_oracle(ta, tb) + usize::from(ha != hb);
                let del = edit_distance_oracle(ta, b) + 1;
                let ins = edit_distance_oracle(a, tb) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    #[test]
    fn levenshtein_known_values() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("go lift", "go left"), 1);
        assert_eq!(levenshtein("same", "same"), 0);
    }

    proptest! {
        #[test]
        fn levenshtein_matches_recursive_oracle(a in "[a-c ]{0,6}", b in "[a-c ]{0,6}") {
            let ac: Vec<char> = a.chars().collect();
            let bc: Vec<char> = b.chars().collect();
            prop_assert_eq!(levenshtein(&a, &b), edit_distance_oracle(&ac, &bc));
        }

        #[test]
        fn integrated_confidence_in_unit_range(
            ca in 0.0..=1.0f64, cv in 0.0..=1.0f64, la in 0usize..7, lv in 0usize..7
        ) {
            let fused = integrate(
                &audio(Action::ALL[la], ca),
                &vision(Action::ALL[lv], cv),
            );
            prop_assert!((0.0..=1.0).contains(&fused.confidence));
            let swapped = integrate(
                &audio(Action::ALL[lv], cv),
                &vision(Action::ALL[la], ca),
            );
            prop_assert_eq!(fused.likeliness, swapped.likeliness);
            prop_assert_eq!(fused.confidence, swapped.confidence);
            if ca != cv {
                let expected = if ca > cv { Action::ALL[la] } else { Action::ALL[lv] };
                prop_assert_eq!(fused.label, expected);
            }
        }

        #[test]
        fn integrated_confidence_increases(p in 0.0..2.0f64, dp in 1e-6..0.5f64) {
            prop_assert!(integrated_confidence(p + dp) > integrated_confidence(p));
        }
    }

    #[test]
    fn exact_hypothesis_is_fully_confident() {
        let p = audio_recognize(&["go left"], &CommandLexicon::default()).unwrap();
        assert_eq!(p.label, Action::GoLeft);
        assert_eq!(p.confidence, 1.0);
    }

    #[test]
    fn one_typo_in_seven_characters() {
        let p = audio_recognize(&["go lift"], &CommandLexicon::default()).unwrap();
        assert_eq!(p.label, Action::GoLeft);
        assert!((p.confidence - (1.0 - 1.0 / 7.0)).abs() < 1e-12);
    }

    #[test]
    fn garbage_clamps_to_zero() {
        let p = audio_recognize(&["zzzzzzzzzzzz"], &CommandLexicon::default()).unwrap();
        assert_eq!(p.confidence, 0.0);
    }

    #[test]
    fn best_of_several_hypotheses() {
        let p = audio_recognize(&["wxpe", "grasq", "grasp"], &CommandLexicon::default()).unwrap();
        assert_eq!((p.label, p.confidence), (Action::Grasp, 1.0));
    }

    #[test]
    fn empty_hypotheses_rejected() {
        let none: [&str; 0] = [];
        assert!(matches!(
            audio_recognize(&none, &CommandLexicon::default()),
            Err(Error::NoHypotheses)
        ));
    }

    #[test]
    fn gesture_mode_and_confidence() {
        use Action::*;
        let p = gesture_recognize(&[Wipe; 5]).unwrap();
        assert_eq!((p.label, p.confidence), (Wipe, 1.0));
        let p = gesture_recognize(&[Wipe, Wipe, Wipe, Grasp, Wipe]).unwrap();
        assert_eq!((p.label, p.confidence), (Wipe, 0.8));
        // 2-2-1 tie: GoLeft occurs last among the tied labels.
        let p = gesture_recognize(&[GoLeft, Grasp, Grasp, Wipe, GoLeft]).unwrap();
        assert_eq!((p.label, p.confidence), (GoLeft, 0.4));
        let p = gesture_recognize(&[GoLeft, GoRight, GoHome, Grasp, Place]).unwrap();
        assert_eq!((p.label, p.confidence), (Place, 0.2));
        assert!(matches!(
            gesture_recognize(&[Wipe; 4]),
            Err(Error::WindowLength { expected: 5, got: 4 })
        ));
    }

    #[test]
    fn worked_fusion_examples() {
        let f = integrate(&audio(Action::GoLeft, 0.8), &vision(Action::GoLeft, 0.6));
        assert_eq!(f.label, Action::GoLeft);
        assert!((f.likeliness - 1.4).abs() < 1e-12);
        assert!((f.confidence - 2.4_f64.ln() / 3.0_f64.ln()).abs() < 1e-12);
        assert!((f.confidence - 0.7968).abs() < 1e-4);

        let f = integrate(&audio(Action::GoLeft, 1.0), &vision(Action::GoLeft, 1.0));
        assert_eq!(f.confidence, 1.0);

        let f = integrate(&audio(Action::GoLeft, 0.7), &vision(Action::Wipe, 0.7));
        assert_eq!(f.label, Action::Wipe);
        assert_eq!(f.likeliness, 0.0);
        assert_eq!(f.confidence, 0.0);
        assert!(!f.congruent);
    }

    #[test]
    fn direct_feedback_round_trips_confidence() {
        let f = IntegratedFeedback::direct(Action::Place, 0.6);
        assert!((integrated_confidence(f.likeliness) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn lexicon_validation() {
        assert!(CommandLexicon::parse("a\nb\nc\nd\ne\nf\ng\n").is_ok());
        assert!(CommandLexicon::parse("a\nb\nc").is_err());
        assert!(CommandLexicon::parse("a\nb\nc\nd\ne\nf\na").is_err());
        let lex = CommandLexicon::default();
        assert_eq!(lex.sentence(Action::GoHome), "go home");
    }
}
