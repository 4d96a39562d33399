//! Populations of seeded agents, learning curves and parameter sweeps.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::advisor::{Advisor, ChannelNoise};
use crate::affordance::FailurePredictor;
use crate::error::{Error, Result};
use crate::fusion::CommandLexicon;
use crate::learner::{Agent, AgentRng, LearnerConfig, NoAdvice, QTable, SimulatedTrainer};
use crate::scenario::StateSpace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "rl")]
    Rl,
    #[serde(rename = "irl")]
    Irl,
    #[serde(rename = "rl-aff")]
    RlAff,
    #[serde(rename = "irl-aff")]
    IrlAff,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::Rl, Condition::Irl, Condition::RlAff, Condition::IrlAff];

    pub fn uses_feedback(self) -> bool {
        matches!(self, Condition::Irl | Condition::IrlAff)
    }

    pub fn uses_affordances(self) -> bool {
        matches!(self, Condition::RlAff | Condition::IrlAff)
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::Rl => "rl",
            Condition::Irl => "irl",
            Condition::RlAff => "rl-aff",
            Condition::IrlAff => "irl-aff",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', '+'], "-");
        Condition::ALL
            .into_iter()
            .find(|c| c.name() == norm)
            .ok_or_else(|| Error::Parse(format!("unknown condition `{s}` (rl, irl, rl-aff, irl-aff)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub condition: Condition,
    pub agents: usize,
    pub episodes: usize,
    pub learner: LearnerConfig,
    pub noise: ChannelNoise,
    pub smoothing_window: usize,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            condition: Condition::Rl,
            agents: 100,
            episodes: 500,
            learner: LearnerConfig::default(),
            noise: ChannelNoise::default(),
            smoothing_window: 10,
            master_seed: 7,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 || self.episodes == 0 {
            return Err(Error::Config("agents and episodes must be at least 1".into()));
        }
        if self.smoothing_window == 0 {
            return Err(Error::Config("smoothing_window must be at least 1".into()));
        }
        self.learner.validate()?;
        self.noise.validate()
    }

    /// Learner settings with the feedback and affordance switches taken from
    /// the condition.
    pub fn effective_learner(&self) -> LearnerConfig {
        LearnerConfig {
            use_feedback: self.condition.uses_feedback(),
            use_affordances: self.condition.uses_affordances(),
            ..self.learner.clone()
        }
    }

    pub fn param_label(&self) -> String {
        format!("theta={};eta={}", self.learner.theta_min, self.learner.eta)
    }

    pub fn agent_seed(&self, agent: usize) -> u64 {
        self.master_seed ^ agent as u64
    }
}

/// Everything shared read-only between agents.
#[derive(Clone)]
pub struct Lab {
    pub space: Arc<StateSpace>,
    pub advisor: Arc<Advisor>,
    pub affordances: Option<Arc<dyn FailurePredictor>>,
}

impl Lab {
    pub fn new(lexicon: CommandLexicon, affordances: Option<Arc<dyn FailurePredictor>>) -> Lab {
        let space = Arc::new(StateSpace::enumerate());
        let advisor = Arc::new(Advisor::new(&space, lexicon));
        Lab {
            space,
            advisor,
            affordances,
        }
    }

    /// Episode rewards of one agent, starting from `initial_q` or from zeros.
    pub fn run_agent(&self, cfg: &ExperimentConfig, agent_index: usize, initial_q: Option<&QTable>) -> Vec<f64> {
        let learner = cfg.effective_learner();
        let mut rng = AgentRng::seed_from_u64(cfg.agent_seed(agent_index));
        let mut agent = match initial_q {
            Some(q) => Agent::with_q(q.clone(), learner.clone()),
            None => Agent::new(self.space.clone(), learner.clone()),
        };
        let mut trainer = SimulatedTrainer::new(self.advisor.clone(), cfg.noise, learner.feedback_probability);
        let affordances = if learner.use_affordances {
            self.affordances.as_deref()
        } else {
            None
        };
        (0..cfg.episodes)
            .map(|_| {
                if learner.use_feedback {
                    agent.run_episode(&mut trainer, affordances, &mut rng).reward
                } else {
                    agent.run_episode(&mut NoAdvice, affordances, &mut rng).reward
                }
            })
            .collect()
    }

    /// Runs `cfg.agents` independent agents and aggregates their rewards.
    pub fn run_condition(&self, cfg: &ExperimentConfig) -> Result<LearningCurve> {
        self.run_condition_from(cfg, None)
    }

    /// Like [`Lab::run_condition`], with every agent starting from `initial_q`.
    pub fn run_condition_from(&self, cfg: &ExperimentConfig, initial_q: Option<&QTable>) -> Result<LearningCurve> {
        cfg.validate()?;
        if cfg.condition.uses_affordances() && self.affordances.is_none() {
            return Err(Error::Config(format!(
                "condition {} needs an affordance model",
                cfg.condition
            )));
        }
        let per_agent: Vec<Vec<f64>> = (0..cfg.agents)
            .into_par_iter()
            .map(|i| self.run_agent(cfg, i, initial_q))
            .collect();
        Ok(LearningCurve::aggregate(
            cfg.condition,
            cfg.param_label(),
            &per_agent,
            cfg.smoothing_window,
        ))
    }

    /// One run per value of `param`, all sharing the base master seed.
    pub fn sweep(
        &self,
        base: &ExperimentConfig,
        param: SweepParam,
        values: &[f64],
    ) -> Result<Vec<(f64, LearningCurve)>> {
        values
            .iter()
            .map(|&v| {
                let mut cfg = base.clone();
                match param {
                    SweepParam::Theta => cfg.learner.theta_min = v,
                    SweepParam::Eta => cfg.learner.eta = v,
                }
                Ok((v, self.run_condition(&cfg)?))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Theta,
    Eta,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "theta" | "theta_min" | "theta-min" => Ok(SweepParam::Theta),
            "eta" => Ok(SweepParam::Eta),
            _ => Err(Error::Parse(format!("unknown sweep parameter `{s}` (theta, eta)"))),
        }
    }
}

/// Sum with Neumaier's compensation.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut c = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Sample variance (n - 1 denominator); zero for fewer than two values.
fn variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    compensated_sum(values.iter().map(|v| (v - m) * (v - m))) / (values.len() - 1) as f64
}

fn standard_error(values: &[f64]) -> f64 {
    (variance(values) / values.len() as f64).sqrt()
}

/// Trailing moving average; the first `window - 1` points average over what
/// is available.
pub fn smooth(raw: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..raw.len())
        .map(|i| {
            let start = (i + 1).saturating_sub(window);
            mean(&raw[start..=i])
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub condition: Condition,
    pub param: String,
    /// Mean reward over agents, per episode.
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// Standard error of the per-episode mean.
    pub stderr: Vec<f64>,
    /// Summed reward over all episodes, per agent. Empty when reloaded from CSV.
    #[serde(default)]
    pub agent_totals: Vec<f64>,
}

impl LearningCurve {
    pub fn aggregate(
        condition: Condition,
        param: String,
        per_agent: &[Vec<f64>],
        window: usize,
    ) -> LearningCurve {
        let episodes = per_agent.first().map_or(0, Vec::len);
        let mut raw = Vec::with_capacity(episodes);
        let mut stderr = Vec::with_capacity(episodes);
        let mut column = Vec::with_capacity(per_agent.len());
        for e in 0..episodes {
            column.clear();
            column.extend(per_agent.iter().map(|r| r[e]));
            raw.push(mean(&column));
            stderr.push(standard_error(&column));
        }
        let agent_totals = per_agent
            .iter()
            .map(|r| compensated_sum(r.iter().copied()))
            .collect();
        LearningCurve {
            condition,
            param,
            smoothed: smooth(&raw, window),
            raw,
            stderr,
            agent_totals,
        }
    }

    pub fn label(&self) -> String {
        format!("{} {}", self.condition, self.param)
    }

    /// Mean over agents of the total reward collected.
    pub fn mean_total(&self) -> f64 {
        mean(&self.agent_totals)
    }

    pub fn total_stderr(&self) -> f64 {
        standard_error(&self.agent_totals)
    }

    /// First episode whose smoothed reward reaches `fraction` of the best
    /// smoothed reward.
    pub fn episodes_to_reach(&self, fraction: f64) -> Option<usize> {
        let best = self.smoothed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let threshold = best - (1.0 - fraction) * best.abs();
        self.smoothed.iter().position(|&v| v >= threshold)
    }
}

/// One-sided Welch t-test of `mean(higher) > mean(lower)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub dof: f64,
    pub p_value: f64,
}

pub fn welch_one_sided(lower: &[f64], higher: &[f64]) -> WelchTest {
    let (va, vb) = (variance(lower) / lower.len() as f64, variance(higher) / higher.len() as f64);
    let se = (va + vb).sqrt();
    let diff = mean(higher) - mean(lower);
    if se == 0.0 {
        let p_value = if diff > 0.0 { 0.0 } else { 1.0 };
        return WelchTest {
            t: diff.signum() * f64::INFINITY,
            dof: f64::NAN,
            p_value,
        };
    }
    let t = diff / se;
    let dof = (va + vb).powi(2)
        / (va * va / (lower.len() - 1) as f64 + vb * vb / (higher.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
    WelchTest {
        t,
        dof,
        p_value: 1.0 - dist.cdf(t),
    }
}

pub const CSV_HEADER: [&str; 6] = ["episode", "condition", "param", "raw_mean", "smoothed_mean", "stderr"];

/// Writes one row per (episode, curve), episodes numbered from 1.
pub fn persist_csv(curves: &[LearningCurve], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for c in curves {
        for e in 0..c.raw.len() {
            w.write_record([
                (e + 1).to_string(),
                c.condition.to_string(),
                c.param.clone(),
                c.raw[e].to_string(),
                c.smoothed[e].to_string(),
                c.stderr[e].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads curves written by [`persist_csv`], in order of first appearance.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<LearningCurve>> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let parse_err = |what: &str| Error::Parse(format!("{}: bad {what}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(CSV_HEADER) {
        return Err(parse_err("header"));
    }
    let mut curves: Vec<LearningCurve> = Vec::new();
    for record in r.records() {
        let record = record.map_err(csv_err)?;
        let condition: Condition = record[1].parse()?;
        let param = record[2].to_string();
        let num = |i: usize| record[i].parse::<f64>().map_err(|_| parse_err(CSV_HEADER[i]));
        let (raw, smoothed, stderr) = (num(3)?, num(4)?, num(5)?);
        let idx = match curves.iter().position(|c| c.condition == condition && c.param == param) {
            Some(i) => i,
            None => {
                curves.push(LearningCurve {
                    condition,
                    param,
                    raw: Vec::new(),
                    smoothed: Vec::new(),
                    stderr: Vec::new(),
                    agent_totals: Vec::new(),
                });
                curves.len() - 1
            }
        };
        let c = &mut curves[idx];
        c.raw.push(raw);
        c.smoothed.push(smoothed);
        c.stderr.push(stderr);
    }
    Ok(curves)
}

pub fn persist_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    out.flush().map_err(|e| Error::io(path, e))
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Renders the smoothed curves as one SVG line chart.
pub fn render_svg(curves: &[LearningCurve], title: &str) -> String {
    let (width, height) = (800.0, 500.0);
    let (left, right, top, bottom) = (70.0, 200.0, 40.0, 50.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let episodes = curves.iter().map(|c| c.smoothed.len()).max().unwrap_or(0).max(2);
    let values = curves.iter().flat_map(|c| c.smoothed.iter().copied());
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (-1.0, 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let x = |i: usize| left + plot_w * i as f64 / (episodes - 1) as f64;
    let y = |v: f64| top + plot_h * (hi - v) / (hi - lo);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        left + plot_w / 2.0,
        escape(title)
    ));
    svg.push_str(&format!(
        "<rect x=\"{left}\" y=\"{top}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"black\"/>\n"
    ));
    for tick in 0..=4 {
        let v = lo + (hi - lo) * tick as f64 / 4.0;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.2}</text>\n",
            left - 6.0,
            y(v) + 4.0,
            v
        ));
    }
    for tick in 0..=5 {
        let i = (episodes - 1) * tick / 5;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            x(i),
            top + plot_h + 18.0,
            i + 1
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">episode</text>\n",
        left + plot_w / 2.0,
        height - 10.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">reward</text>\n",
        top + plot_h / 2.0,
        top + plot_h / 2.0
    ));
    for (n, c) in curves.iter().enumerate() {
        let color = PALETTE[n % PALETTE.len()];
        let points: Vec<String> = c
            .smoothed
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        let ly = top + 16.0 + 18.0 * n as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            left + plot_w + 10.0,
            left + plot_w + 30.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            left + plot_w + 36.0,
            ly + 4.0,
            escape(&c.label())
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn emit_plot(curves: &[LearningCurve], title: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_svg(curves, title)).map_err(|e| Error::io(path, e))
}
