use affordance_irl::affordance::{
    generate_dataset, read_dataset_csv, train, true_effect, write_dataset_csv, AffordanceNet, Effect,
    FailurePredictor, FailureTable, TrainConfig, TrueFailures, HIDDEN, INPUTS, OUTPUTS, PARAMS,
};
use affordance_irl::scenario::{step, Action, Location, Next, StateSpace};
use affordance_irl::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central differences of the forward pass, one column per parameter.
fn numeric_jacobian(net: &AffordanceNet, input: &[f64], h: f64) -> Vec<Vec<f64>> {
    let base = net.params();
    let mut rows = vec![vec![0.0; PARAMS]; OUTPUTS];
    for p in 0..PARAMS {
        let mut plus = base.clone();
        plus[p] += h;
        let mut minus = base.clone();
        minus[p] -= h;
        let up = AffordanceNet::from_params(&plus, 0).forward(input);
        let down = AffordanceNet::from_params(&minus, 0).forward(input);
        for k in 0..OUTPUTS {
            rows[k][p] = (up[k] - down[k]) / (2.0 * h);
        }
    }
    rows
}

fn frobenius(rows: &[Vec<f64>]) -> f64 {
    rows.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn jacobian_agrees_with_central_differences() {
    let samples = generate_dataset(&StateSpace::enumerate());
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for draw in 0..20 {
        let net = AffordanceNet::random(rng.random());
        let sample = &samples[rng.random_range(0..samples.len())];
        let analytic = net.jacobian(&sample.input);
        let numeric = numeric_jacobian(&net, &sample.input, 1e-6);
        let diff: Vec<Vec<f64>> = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| a.iter().zip(n).map(|(x, y)| x - y).collect())
            .collect();
        let rel = frobenius(&diff) / frobenius(&numeric);
        assert!(rel < 1e-4, "draw {draw}: relative error {rel:e}");
    }
}

#[test]
fn network_shape() {
    assert_eq!(INPUTS, 20);
    assert_eq!(HIDDEN, 30);
    assert_eq!(OUTPUTS, 13);
    assert_eq!(PARAMS, 30 * 21 + 13 * 31);
    let net = AffordanceNet::random(3);
    assert_eq!(net.params().len(), PARAMS);
    assert_eq!(AffordanceNet::from_params(&net.params(), 3), net);
}

#[test]
fn dataset_covers_every_pair_once() {
    let space = StateSpace::enumerate();
    let samples = generate_dataset(&space);
    assert_eq!(samples.len(), space.len() * 7);
    assert_eq!(samples.len(), 357);
    let mut inputs: Vec<_> = samples.iter().map(|s| s.input.map(|v| v as u8)).collect();
    inputs.sort();
    inputs.dedup();
    assert_eq!(inputs.len(), samples.len());
    for s in &samples {
        assert_eq!(s.input.iter().filter(|&&v| v == 1.0).count(), 5);
        assert!(s.input.iter().all(|&v| v == 0.0 || v == 1.0));
        let ones = s.target.iter().filter(|&&v| v == 1.0).count();
        assert!(ones == 0 || ones == 4, "target with {ones} units on");
    }
}

#[test]
fn labels_agree_with_the_transition_function() {
    let space = StateSpace::enumerate();
    for s in space.states() {
        for a in Action::ALL {
            let failed = step(s, a, Location::Left).next == Next::Failed;
            assert_eq!(true_effect(s, a).is_failed(), failed, "{s} {a}");
            assert_eq!(TrueFailures.predicts_failure(s, a), failed);
        }
    }
}

#[test]
fn dataset_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dataset.csv");
    let samples = generate_dataset(&StateSpace::enumerate());
    write_dataset_csv(&samples, &path).unwrap();
    assert_eq!(read_dataset_csv(&path).unwrap(), samples);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), samples.len() + 1);
    assert!(text.starts_with("in_0,"));
}

#[test]
fn weights_round_trip_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let net = AffordanceNet::random(11);
    net.save(&path).unwrap();
    assert_eq!(AffordanceNet::load(&path).unwrap(), net);
}

#[test]
fn malformed_weights_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let mut net = AffordanceNet::random(11);
    net.hidden_weights.pop();
    net.save(&path).unwrap();
    assert!(matches!(AffordanceNet::load(&path), Err(Error::Parse(_))));
    let missing = dir.path().join("absent.json");
    match AffordanceNet::load(&missing) {
        Err(Error::Io { path, .. }) => assert_eq!(path, missing),
        other => panic!("expected an io error, got {other:?}"),
    }
}

#[test]
fn short_training_lowers_the_error_and_is_reproducible() {
    let samples = generate_dataset(&StateSpace::enumerate());
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let a = train(&samples, &cfg).unwrap();
    let b = train(&samples, &cfg).unwrap();
    assert_eq!(a.net, b.net);
    assert_eq!(a.sse_history.len(), 4);
    assert!(a.sse_history.windows(2).all(|w| w[1] <= w[0]));
    assert!(a.sse_history[3] < a.sse_history[0]);
}

#[test]
fn training_needs_data() {
    assert!(matches!(train(&[], &TrainConfig::default()), Err(Error::EmptyDataset)));
}

#[test]
fn failure_table_matches_its_model() {
    let space = StateSpace::enumerate();
    let net = AffordanceNet::random(5);
    let table = FailureTable::new(&space, net.clone());
    for s in space.states() {
        for a in Action::ALL {
            assert_eq!(table.predicts_failure(s, a), net.predicts_failure(s, a));
        }
    }
}

proptest! {
    #[test]
    fn outputs_are_probabilities(seed in any::<u64>(), input in prop::collection::vec(0.0f64..=1.0, INPUTS)) {
        let y = AffordanceNet::random(seed).forward(&input);
        prop_assert!(y.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn decoding_an_encoding_is_identity(i in 0usize..357) {
        let samples = generate_dataset(&StateSpace::enumerate());
        let decoded = Effect::decode(&samples[i].target);
        prop_assert_eq!(decoded.encode(), samples[i].target);
    }
}
