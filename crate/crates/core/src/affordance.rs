//! Contextual affordances: predicting the effect of an action from the current
//! state.
//!
//! A 20-30-13 sigmoid network maps the one-hot (state, action) code to the
//! one-hot successor state. Actions that end in a failed state map to the
//! all-zero vector, so a prediction with every output below one half reads as
//! "this action fails here". The training set is the complete enumeration of
//! (state, action) pairs, and the network is fitted by Levenberg-Marquardt:
//! damped Gauss-Newton steps on the summed squared output error.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{
    self, Action, GobletPlace, Location, Next, StateSpace, WorldState, ACTION_CODE_LEN,
    STATE_CODE_LEN,
};

pub const INPUTS: usize = STATE_CODE_LEN + ACTION_CODE_LEN;
pub const HIDDEN: usize = 30;
pub const OUTPUTS: usize = STATE_CODE_LEN;

const HIDDEN_ROW: usize = INPUTS + 1;
const OUTPUT_ROW: usize = HIDDEN + 1;
const OUTPUT_OFFSET: usize = HIDDEN * HIDDEN_ROW;

/// Number of trainable parameters, biases included.
pub const PARAMS: usize = HIDDEN * HIDDEN_ROW + OUTPUTS * OUTPUT_ROW;

/// Below this, an output unit counts as off.
pub const DECODE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffordanceSample {
    pub input: [f64; INPUTS],
    pub target: [f64; OUTPUTS],
}

impl AffordanceSample {
    pub fn new(state: &WorldState, action: Action, effect: Effect) -> AffordanceSample {
        AffordanceSample {
            input: encode_input(state, action),
            target: effect.encode(),
        }
    }
}

/// What an action does: leads to a state, or fails.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "state")]
pub enum Effect {
    State(WorldState),
    Failed,
}

impl Effect {
    pub fn encode(&self) -> [f64; OUTPUTS] {
        match self {
            Effect::State(s) => s.one_hot(),
            Effect::Failed => [0.0; OUTPUTS],
        }
    }

    /// Decoding rule for network outputs: all units off means failure,
    /// otherwise each one-hot group takes its largest unit.
    pub fn decode(raw: &[f64]) -> Effect {
        assert_eq!(raw.len(), OUTPUTS);
        if raw.iter().all(|&v| v < DECODE_THRESHOLD) {
            return Effect::Failed;
        }
        let mut code = [0.0; OUTPUTS];
        for group in [0..3, 3..6, 6..9, 9..13] {
            let start = group.start;
            let best = scenario::argmax(&raw[group]);
            code[start + best] = 1.0;
        }
        WorldState::from_one_hot(&code).map_or(Effect::Failed, Effect::State)
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, Effect::Failed)
    }
}

pub fn encode_input(state: &WorldState, action: Action) -> [f64; INPUTS] {
    let mut input = [0.0; INPUTS];
    input[..STATE_CODE_LEN].copy_from_slice(&state.one_hot());
    input[STATE_CODE_LEN..].copy_from_slice(&action.one_hot());
    input
}

/// The episode origin assumed when labelling `Abort`.
///
/// A state does not record which side the goblet started on, so the training
/// label for `Abort` resets to the side the goblet currently stands on, or to
/// the left if it is being carried.
pub fn abort_origin(state: &WorldState) -> Location {
    match state.goblet {
        GobletPlace::Right => Location::Right,
        GobletPlace::Left | GobletPlace::InHand => Location::Left,
    }
}

/// The true effect of `action` in `state`. Reaching the final state counts as
/// the final state itself.
pub fn true_effect(state: &WorldState, action: Action) -> Effect {
    let t = scenario::step(state, action, abort_origin(state));
    match t.next {
        Next::State(s) => Effect::State(s),
        Next::Failed => Effect::Failed,
        Next::Done => {
            // Only `Place` with the sponge at home finishes the task.
            Effect::State(WorldState {
                hand_object: scenario::HandObject::Free,
                ..*state
            })
        }
    }
}

/// One sample per enumerated (state, action) pair, states in enumeration order.
pub fn generate_dataset(space: &StateSpace) -> Vec<AffordanceSample> {
    space
        .states()
        .iter()
        .flat_map(|s| Action::ALL.map(|a| AffordanceSample::new(s, a, true_effect(s, a))))
        .collect()
}

pub fn write_dataset_csv(samples: &[AffordanceSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = (0..INPUTS)
        .map(|i| format!("in_{i}"))
        .chain((0..OUTPUTS).map(|i| format!("out_{i}")))
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    for s in samples {
        let row: Vec<String> = s.input.iter().chain(&s.target).map(|v| v.to_string()).collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<Vec<AffordanceSample>> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut samples = Vec::new();
    for record in r.records() {
        let record = record.map_err(csv_err)?;
        if record.len() != INPUTS + OUTPUTS {
            return Err(Error::Parse(format!(
                "{}: expected {} columns, got {}",
                path.display(),
                INPUTS + OUTPUTS,
                record.len()
            )));
        }
        let values = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let mut sample = AffordanceSample {
            input: [0.0; INPUTS],
            target: [0.0; OUTPUTS],
        };
        sample.input.copy_from_slice(&values[..INPUTS]);
        sample.target.copy_from_slice(&values[INPUTS..]);
        samples.push(sample);
    }
    Ok(samples)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Two-layer sigmoid network. Each hidden unit owns `INPUTS` weights plus a
/// bias; each output unit owns `HIDDEN` weights plus a bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffordanceNet {
    /// `HIDDEN` rows of `INPUTS + 1` values, bias last.
    pub hidden_weights: Vec<Vec<f64>>,
    /// `OUTPUTS` rows of `HIDDEN + 1` values, bias last.
    pub output_weights: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Forward pass intermediates for one input.
struct Activations {
    hidden: [f64; HIDDEN],
    output: [f64; OUTPUTS],
}

impl AffordanceNet {
    /// Weights drawn uniformly from `[-0.5, 0.5]`.
    pub fn random(seed: u64) -> AffordanceNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<f64> = (0..PARAMS).map(|_| rng.random_range(-0.5..=0.5)).collect();
        AffordanceNet::from_params(&params, seed)
    }

    pub fn from_params(params: &[f64], seed: u64) -> AffordanceNet {
        assert_eq!(params.len(), PARAMS);
        let (hidden, output) = params.split_at(OUTPUT_OFFSET);
        AffordanceNet {
            hidden_weights: hidden.chunks(HIDDEN_ROW).map(<[f64]>::to_vec).collect(),
            output_weights: output.chunks(OUTPUT_ROW).map(<[f64]>::to_vec).collect(),
            seed,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        self.hidden_weights
            .iter()
            .chain(&self.output_weights)
            .flatten()
            .copied()
            .collect()
    }

    fn check_shape(&self) -> Result<()> {
        let ok = self.hidden_weights.len() == HIDDEN
            && self.hidden_weights.iter().all(|r| r.len() == HIDDEN_ROW)
            && self.output_weights.len() == OUTPUTS
            && self.output_weights.iter().all(|r| r.len() == OUTPUT_ROW)
            && self.params().iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Parse(format!(
                "network must be {INPUTS}-{HIDDEN}-{OUTPUTS} with finite weights"
            )))
        }
    }

    fn activations(&self, input: &[f64]) -> Activations {
        let mut hidden = [0.0; HIDDEN];
        for (h, w) in hidden.iter_mut().zip(&self.hidden_weights) {
            let mut z = w[INPUTS];
            for (x, wi) in input.iter().zip(w) {
                if *x != 0.0 {
                    z += x * wi;
                }
            }
            *h = sigmoid(z);
        }
        let mut output = [0.0; OUTPUTS];
        for (y, w) in output.iter_mut().zip(&self.output_weights) {
            let z = w[HIDDEN] + hidden.iter().zip(w).map(|(h, wi)| h * wi).sum::<f64>();
            *y = sigmoid(z);
        }
        Activations { hidden, output }
    }

    pub fn forward(&self, input: &[f64]) -> [f64; OUTPUTS] {
        assert_eq!(input.len(), INPUTS);
        self.activations(input).output
    }

    pub fn predict_effect(&self, state: &WorldState, action: Action) -> EffectPrediction {
        let raw = self.forward(&encode_input(state, action));
        EffectPrediction {
            raw,
            decoded: Effect::decode(&raw),
        }
    }

    pub fn predicts_failure(&self, state: &WorldState, action: Action) -> bool {
        self.predict_effect(state, action).decoded.is_failed()
    }

    /// Derivatives of the 13 outputs with respect to every parameter, one row
    /// per output, columns in [`AffordanceNet::params`] order.
    pub fn jacobian(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let act = self.activations(input);
        let mut rows = vec![vec![0.0; PARAMS]; OUTPUTS];
        for (k, row) in rows.iter_mut().enumerate() {
            for (col, value) in self.jacobian_row(input, &act, k) {
                row[col] = value;
            }
        }
        rows
    }

    /// Non-zero entries of one Jacobian row as (column, value) pairs.
    fn jacobian_row(&self, input: &[f64], act: &Activations, k: usize) -> Vec<(usize, f64)> {
        let y = act.output[k];
        let dy = y * (1.0 - y);
        let mut entries = Vec::with_capacity(OUTPUT_ROW + HIDDEN * 8);
        let w_out = &self.output_weights[k];
        for j in 0..HIDDEN {
            let h = act.hidden[j];
            let back = dy * w_out[j] * h * (1.0 - h);
            let base = j * HIDDEN_ROW;
            for (i, x) in input.iter().enumerate() {
                if *x != 0.0 {
                    entries.push((base + i, back * x));
                }
            }
            entries.push((base + INPUTS, back));
        }
        let base = OUTPUT_OFFSET + k * OUTPUT_ROW;
        for j in 0..HIDDEN {
            entries.push((base + j, dy * act.hidden[j]));
        }
        entries.push((base + HIDDEN, dy));
        entries
    }

    pub fn sum_squared_error(&self, samples: &[AffordanceSample]) -> f64 {
        samples
            .iter()
            .map(|s| {
                self.forward(&s.input)
                    .iter()
                    .zip(&s.target)
                    .map(|(y, t)| (y - t) * (y - t))
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn mean_squared_error(&self, samples: &[AffordanceSample]) -> f64 {
        self.sum_squared_error(samples) / (samples.len() * OUTPUTS) as f64
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let doc = NetDocument {
            layers: [INPUTS, HIDDEN, OUTPUTS],
            activation: "sigmoid".into(),
            net: self.clone(),
        };
        let json = serde_json::to_string_pretty(&doc).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<AffordanceNet> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: NetDocument = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if doc.layers != [INPUTS, HIDDEN, OUTPUTS] {
            return Err(Error::Parse(format!(
                "{}: unsupported layer shape {:?}",
                path.display(),
                doc.layers
            )));
        }
        doc.net.check_shape()?;
        Ok(doc.net)
    }
}

#[derive(Serialize, Deserialize)]
struct NetDocument {
    layers: [usize; 3],
    activation: String,
    #[serde(flatten)]
    net: AffordanceNet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectPrediction {
    pub raw: [f64; OUTPUTS],
    pub decoded: Effect,
}

/// Anything that can tell whether an action leads to a failed state.
pub trait FailurePredictor: Send + Sync {
    fn predicts_failure(&self, state: &WorldState, action: Action) -> bool;
}

impl FailurePredictor for AffordanceNet {
    fn predicts_failure(&self, state: &WorldState, action: Action) -> bool {
        AffordanceNet::predicts_failure(self, state, action)
    }
}

/// The exact failure flags of the true transition function.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrueFailures;

impl FailurePredictor for TrueFailures {
    fn predicts_failure(&self, state: &WorldState, action: Action) -> bool {
        true_effect(state, action).is_failed()
    }
}

/// Failure predictions of some model tabulated over the enumerated states.
/// States outside the table fall back to the model.
pub struct FailureTable<P> {
    space: StateSpace,
    flags: Vec<[bool; 7]>,
    model: P,
}

impl<P: FailurePredictor> FailureTable<P> {
    pub fn new(space: &StateSpace, model: P) -> FailureTable<P> {
        let flags = space
            .states()
            .iter()
            .map(|s| Action::ALL.map(|a| model.predicts_failure(s, a)))
            .collect();
        FailureTable {
            space: space.clone(),
            flags,
            model,
        }
    }

    pub fn model(&self) -> &P {
        &self.model
    }
}

impl<P: FailurePredictor> FailurePredictor for FailureTable<P> {
    fn predicts_failure(&self, state: &WorldState, action: Action) -> bool {
        match self.space.index_of(state) {
            Some(i) => self.flags[i][action.index()],
            None => self.model.predicts_failure(state, action),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub initial_damping: f64,
    pub max_damping: f64,
    /// Training stops once the gradient norm `‖Jᵀe‖` falls below this.
    pub min_gradient: f64,
    /// Mean squared error above which training is reported as not converged.
    pub target_mse: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            seed: 1,
            initial_damping: 1e-3,
            max_damping: 1e10,
            min_gradient: 1e-7,
            target_mse: 1e-2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainingReport {
    pub net: AffordanceNet,
    pub mse: f64,
    pub converged: bool,
    pub epochs_run: usize,
    /// Summed squared error before training and after every epoch.
    pub sse_history: Vec<f64>,
}

/// Accumulates the Gauss-Newton normal equations `JᵀJ` and `Jᵀe` over the
/// full batch.
///
/// Rows of `J` are sparse: an output only depends on its own output-layer
/// weights, and a one-hot input only activates a handful of first-layer
/// weights. The hidden-hidden block of `JᵀJ` for one sample factors as
/// `(Σₖ uₖuₖᵀ) ⊗ (x xᵀ)`, which keeps the cost per sample small.
fn normal_equations(net: &AffordanceNet, samples: &[AffordanceSample]) -> (DMatrix<f64>, DVector<f64>) {
    let n = PARAMS;
    let mut hessian = vec![0.0_f64; n * n];
    let mut gradient = vec![0.0_f64; n];
    let mut u = [[0.0_f64; HIDDEN]; OUTPUTS];
    let mut v = [[0.0_f64; OUTPUT_ROW]; OUTPUTS];
    let mut e = [0.0_f64; OUTPUTS];
    let mut m = [[0.0_f64; HIDDEN]; HIDDEN];
    for s in samples {
        let act = net.activations(&s.input);
        // Active inputs including the bias, as (column within a hidden row, value).
        let active: Vec<(usize, f64)> = s
            .input
            .iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, x)| (i, *x))
            .chain(std::iter::once((INPUTS, 1.0)))
            .collect();
        for k in 0..OUTPUTS {
            let y = act.output[k];
            let dy = y * (1.0 - y);
            e[k] = y - s.target[k];
            let w_out = &net.output_weights[k];
            for j in 0..HIDDEN {
                let h = act.hidden[j];
                u[k][j] = dy * w_out[j] * h * (1.0 - h);
                v[k][j] = dy * h;
            }
            v[k][HIDDEN] = dy;
        }

        for j in 0..HIDDEN {
            for jj in j..HIDDEN {
                m[j][jj] = (0..OUTPUTS).map(|k| u[k][j] * u[k][jj]).sum();
            }
        }
        for j in 0..HIDDEN {
            for jj in j..HIDDEN {
                for &(i, xi) in &active {
                    let row = j * HIDDEN_ROW + i;
                    for &(ii, xii) in &active {
                        let col = jj * HIDDEN_ROW + ii;
                        if col >= row {
                            hessian[row * n + col] += m[j][jj] * xi * xii;
                        }
                    }
                }
            }
        }

        for k in 0..OUTPUTS {
            let out_base = OUTPUT_OFFSET + k * OUTPUT_ROW;
            for j in 0..HIDDEN {
                for &(i, xi) in &active {
                    let row = j * HIDDEN_ROW + i;
                    let ux = u[k][j] * xi;
                    gradient[row] += ux * e[k];
                    let dst = &mut hessian[row * n + out_base..row * n + out_base + OUTPUT_ROW];
                    for (d, vk) in dst.iter_mut().zip(&v[k]) {
                        *d += ux * vk;
                    }
                }
            }
            for a in 0..OUTPUT_ROW {
                let row = out_base + a;
                gradient[row] += v[k][a] * e[k];
                let va = v[k][a];
                let dst = &mut hessian[row * n + row..row * n + out_base + OUTPUT_ROW];
                for (d, vb) in dst.iter_mut().zip(&v[k][a..]) {
                    *d += va * vb;
                }
            }
        }
    }
    // Row-major upper triangle read as column-major is the lower triangle.
    (DMatrix::from_vec(n, n, hessian), DVector::from_vec(gradient))
}

/// Fits the network with Levenberg-Marquardt.
///
/// Each epoch solves `(JᵀJ + μI) δ = -Jᵀe`. A step that lowers the summed
/// squared error is kept and μ shrinks tenfold; otherwise μ grows tenfold and
/// the step is retried. Training stops after `epochs` accepted epochs, when the
/// gradient vanishes, or when μ exceeds its ceiling.
pub fn train(samples: &[AffordanceSample], cfg: &TrainConfig) -> Result<TrainingReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut net = AffordanceNet::random(cfg.seed);
    let mut params = net.params();
    let mut sse = net.sum_squared_error(samples);
    let mut damping = cfg.initial_damping;
    let mut history = vec![sse];
    let mut epochs_run = 0;

    'epochs: for _ in 0..cfg.epochs {
        let (jtj, jte) = normal_equations(&net, samples);
        if jte.norm() < cfg.min_gradient {
            break;
        }
        loop {
            let mut system = jtj.clone();
            for i in 0..PARAMS {
                system[(i, i)] += damping;
            }
            let accepted = system.cholesky().and_then(|chol| {
                let delta = chol.solve(&(-&jte));
                let candidate: Vec<f64> = params.iter().zip(delta.iter()).map(|(p, d)| p + d).collect();
                let trial = AffordanceNet::from_params(&candidate, cfg.seed);
                let trial_sse = trial.sum_squared_error(samples);
                (trial_sse < sse).then_some((candidate, trial, trial_sse))
            });
            match accepted {
                Some((candidate, trial, trial_sse)) => {
                    params = candidate;
                    net = trial;
                    sse = trial_sse;
                    damping = (damping / 10.0).max(f64::MIN_POSITIVE);
                    break;
                }
                None => {
                    damping *= 10.0;
                    if damping > cfg.max_damping {
                        tracing::debug!(epoch = epochs_run, "damping ceiling reached");
                        break 'epochs;
                    }
                }
            }
        }
        epochs_run += 1;
        history.push(sse);
        if sse == 0.0 {
            break;
        }
    }

    let mse = sse / (samples.len() * OUTPUTS) as f64;
    let converged = mse <= cfg.target_mse;
    if !converged {
        tracing::warn!(mse, target = cfg.target_mse, "affordance training did not converge");
    }
    Ok(TrainingReport {
        net,
        mse,
        converged,
        epochs_run,
        sse_history: history,
    })
}

/// Agreement of a trained network with the true transition function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub samples: usize,
    /// Decoded prediction equals the true effect.
    pub effect_matches: usize,
    /// Failure flag equals the true failure flag.
    pub failure_matches: usize,
}

impl Fidelity {
    pub fn measure(net: &AffordanceNet, space: &StateSpace) -> Fidelity {
        let mut fidelity = Fidelity {
            samples: 0,
            effect_matches: 0,
            failure_matches: 0,
        };
        for s in space.states() {
            for a in Action::ALL {
                let truth = true_effect(s, a);
                let predicted = net.predict_effect(s, a).decoded;
                fidelity.samples += 1;
                fidelity.effect_matches += usize::from(predicted == truth);
                fidelity.failure_matches += usize::from(predicted.is_failed() == truth.is_failed());
            }
        }
        fidelity
    }

    pub fn effect_accuracy(&self) -> f64 {
        self.effect_matches as f64 / self.samples as f64
    }

    pub fn failure_accuracy(&self) -> f64 {
        self.failure_matches as f64 / self.samples as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(s: &str) -> WorldState {
        s.parse().unwrap()
    }

    #[test]
    fn dataset_covers_every_pair() {
        let space = StateSpace::enumerate();
        let data = generate_dataset(&space);
        assert_eq!(data.len(), space.len() * 7);
        for s in &data {
            assert_eq!(s.input.iter().filter(|&&v| v == 1.0).count(), 5);
            assert_eq!(s.input.iter().filter(|&&v| v == 0.0).count(), INPUTS - 5);
            let ones = s.target.iter().filter(|&&v| v == 1.0).count();
            assert!(ones == 4 || ones == 0);
        }
    }

    #[test]
    fn dataset_targets_mirror_step() {
        let space = StateSpace::enumerate();
        let data = generate_dataset(&space);
        let find = |s: &str, a: Action| {
            let input = encode_input(&st(s), a);
            data.iter().find(|d| d.input == input).unwrap().target
        };
        assert_eq!(find("free|home|right|DD", Action::Grasp), st("sponge|home|right|DD").one_hot());
        assert_eq!(find("sponge|right|right|DD", Action::Wipe), [0.0; OUTPUTS]);
    }

    #[test]
    fn decoding_targets_recovers_effects() {
        let space = StateSpace::enumerate();
        for s in space.states() {
            for a in Action::ALL {
                let effect = true_effect(s, a);
                assert_eq!(Effect::decode(&effect.encode()), effect);
            }
        }
    }

    #[test]
    fn decode_threshold() {
        assert_eq!(Effect::decode(&[0.49; OUTPUTS]), Effect::Failed);
        let mut raw = [0.1; OUTPUTS];
        raw[0] = 0.6;
        // Groups without a unit above threshold still take their argmax.
        let decoded = Effect::decode(&raw);
        assert_eq!(decoded, Effect::State(st("free|left|left|DD")));
    }

    #[test]
    fn outputs_stay_in_open_unit_interval() {
        let net = AffordanceNet::random(3);
        let space = StateSpace::enumerate();
        for s in space.states() {
            for a in Action::ALL {
                let raw = net.predict_effect(s, a).raw;
                assert!(raw.iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn single_sample_is_memorized() {
        let space = StateSpace::enumerate();
        let data = &generate_dataset(&space)[..1];
        let report = train(data, &TrainConfig::default()).unwrap();
        assert!(report.mse < 1e-6, "mse {}", report.mse);
        assert!(report.converged);
    }

    #[test]
    fn training_is_deterministic_and_monotone() {
        let space = StateSpace::enumerate();
        let data: Vec<_> = generate_dataset(&space).into_iter().step_by(9).collect();
        let cfg = TrainConfig {
            epochs: 15,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.sse_history, b.sse_history);
        for w in a.sse_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn structured_normal_equations_match_dense_jacobian() {
        let space = StateSpace::enumerate();
        let data: Vec<_> = generate_dataset(&space).into_iter().step_by(37).collect();
        let net = AffordanceNet::random(9);
        let (jtj, jte) = normal_equations(&net, &data);
        let mut dense_jtj = DMatrix::<f64>::zeros(PARAMS, PARAMS);
        let mut dense_jte = DVector::<f64>::zeros(PARAMS);
        for s in &data {
            let jac = net.jacobian(&s.input);
            let y = net.forward(&s.input);
            for k in 0..OUTPUTS {
                let row = DVector::from_column_slice(&jac[k]);
                dense_jtj += &row * row.transpose();
                dense_jte += &row * (y[k] - s.target[k]);
            }
        }
        for c in 0..PARAMS {
            for r in c..PARAMS {
                assert!((jtj[(r, c)] - dense_jtj[(r, c)]).abs() < 1e-12, "({r}, {c})");
            }
        }
        assert!((jte - dense_jte).amax() < 1e-12);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(train(&[], &TrainConfig::default()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn params_round_trip() {
        let net = AffordanceNet::random(5);
        assert_eq!(AffordanceNet::from_params(&net.params(), 5), net);
        assert_eq!(net.params().len(), 20 * 30 + 30 + 30 * 13 + 13);
    }

    #[test]
    fn failure_table_matches_model() {
        let space = StateSpace::enumerate();
        let table = FailureTable::new(&space, TrueFailures);
        assert!(table.predicts_failure(&st("goblet|home|hand|DD"), Action::Place));
        assert!(!table.predicts_failure(&st("free|home|left|DD"), Action::Grasp));
    }
}
