use affordance_irl::advisor::{Advisor, ChannelNoise};
use affordance_irl::fusion::CommandLexicon;
use affordance_irl::scenario::StateSpace;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DRAWS: usize = 10_000;

/// Fraction of draws whose fused label equals the intended action, cycling
/// through every state, with its standard error.
fn fused_accuracy(advisor: &Advisor, space: &StateSpace, noise: ChannelNoise, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = (0..DRAWS)
        .filter(|i| {
            let s = space.states()[i % space.len()];
            let e = advisor.emit_advice(&s, &noise, &mut rng).unwrap();
            e.fused.label == e.intended
        })
        .count();
    let p = hits as f64 / DRAWS as f64;
    (p, (p * (1.0 - p) / DRAWS as f64).sqrt())
}

fn setup() -> (Advisor, StateSpace) {
    let space = StateSpace::enumerate();
    (Advisor::new(&space, CommandLexicon::default()), space)
}

/// Counts at the default noise and seed 0: (correct fused labels, congruent
/// channels, summed fused confidence). Regenerate only on an intentional change
/// to the noise model or the draw order.
const BASELINE: (usize, usize, f64) = (10_000, 9_821, 9_287.625_462_560_234);

#[test]
fn default_noise_baseline() {
    let (advisor, space) = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut hits, mut congruent, mut confidence) = (0, 0, 0.0);
    for i in 0..DRAWS {
        let s = space.states()[i % space.len()];
        let e = advisor.emit_advice(&s, &ChannelNoise::default(), &mut rng).unwrap();
        hits += usize::from(e.fused.label == e.intended);
        congruent += usize::from(e.fused.congruent);
        confidence += e.fused.confidence;
    }
    assert_eq!((hits, congruent), (BASELINE.0, BASELINE.1));
    assert!((confidence - BASELINE.2).abs() < 1e-9, "{confidence}");
    // Incongruent advice exists at the default rates, but is rare.
    assert!(congruent < DRAWS && congruent > DRAWS * 9 / 10);
}

#[test]
fn noiseless_channels_are_always_right() {
    let (advisor, space) = setup();
    let (p, _) = fused_accuracy(&advisor, &space, ChannelNoise::NONE, 1);
    assert_eq!(p, 1.0);
}

fn assert_non_increasing(points: &[(f64, f64)], what: &str) {
    for w in points.windows(2) {
        let ((p0, se0), (p1, se1)) = (w[0], w[1]);
        let tolerance = 2.0 * (se0 * se0 + se1 * se1).sqrt();
        assert!(p1 <= p0 + tolerance, "{what}: {p1} after {p0} (tolerance {tolerance})");
    }
}

#[test]
fn accuracy_falls_with_vision_noise() {
    let (advisor, space) = setup();
    let points: Vec<_> = [0.0, 0.1, 0.2, 0.4, 0.6, 0.8]
        .iter()
        .map(|&rate| {
            let noise = ChannelNoise {
                vision_label_error_rate: rate,
                ..ChannelNoise::default()
            };
            fused_accuracy(&advisor, &space, noise, 2)
        })
        .collect();
    assert_non_increasing(&points, "vision");
}

#[test]
fn accuracy_falls_with_audio_noise() {
    let (advisor, space) = setup();
    let points: Vec<_> = [0.0, 0.05, 0.1, 0.2, 0.4, 0.6]
        .iter()
        .map(|&rate| {
            let noise = ChannelNoise {
                audio_char_error_rate: rate,
                ..ChannelNoise::default()
            };
            fused_accuracy(&advisor, &space, noise, 3)
        })
        .collect();
    assert_non_increasing(&points, "audio");
}
