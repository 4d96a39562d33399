use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::PathBuf;

use affordance_irl::experiment::{Condition, SweepParam};
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};

/// Env var naming the default output directory.
pub const OUT_DIR_ENV: &str = "AIRL_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "airl", version, about = "Affordance-driven interactive reinforcement learning on a table-cleaning task")]
pub struct Cli {
    /// Directory for result files [default: airl-out]
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    pub out_dir: Option<PathBuf>,

    /// JSON object of flag values; flags given on the command line win
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Command sentences, one per line in action order [default: go left, go right, go home, grasp, place, wipe, abort]
    #[arg(long, global = true)]
    pub lexicon: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the reachable states and the size of the effect dataset
    Enumerate(EnumerateArgs),
    /// Train the affordance network and write its weights and accuracy
    TrainAffordances(TrainArgs),
    /// Run agent populations under one or more learning conditions
    Run(RunArgs),
    /// Run one condition over a range of theta or eta values
    Sweep(SweepArgs),
    /// Serve live learning sessions over HTTP and WebSocket
    Serve(ServeArgs),
    /// Fuse (sentence, gesture window) rows and print the integrated advice
    Fuse(FuseArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EnumerateArgs {
    /// Also write the effect dataset as CSV
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
}

/// Where the affordance network comes from.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct NetArgs {
    /// Weights file written by train-affordances; without it a network is trained first
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,

    /// Training epochs [default: 100]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,

    /// Seed of the initial weights [default: 1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub net_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    /// Training epochs [default: 100]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,

    /// Seed of the initial weights [default: 1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub net_seed: Option<u64>,

    /// Weights output [default: <out-dir>/affordance-net.json]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,

    /// Accuracy report output [default: <out-dir>/affordance-report.json]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
}

/// Settings shared by `run` and `sweep`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExperimentArgs {
    /// Learning rate [default: 0.3]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,

    /// Discount factor [default: 0.9]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,

    /// Exploration rate [default: 0.1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,

    /// Chance per step that the simulated trainer gives advice [default: 0.3]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feedback_probability: Option<f64>,

    /// Advice is followed only when its confidence is above this [default: 0.25]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,

    /// Chance per step that the affordance check is applied [default: 1.0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,

    /// Step cap per episode [default: 100]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,

    /// Agents per condition [default: 100]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agents: Option<usize>,

    /// Episodes per agent [default: 500]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episodes: Option<usize>,

    /// Master seed; agent i uses seed ^ i [default: 7]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    /// Trailing-mean window of the smoothed curves [default: 10]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<usize>,

    /// Per-character substitution rate of the spoken advice [default: 0.05]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audio_noise: Option<f64>,

    /// Per-frame error rate of the gesture labels [default: 0.2]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vision_noise: Option<f64>,

    /// Size of the speech recognizer's n-best list [default: 10]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypotheses: Option<usize>,

    /// Base name of the CSV, JSON and SVG outputs [default: run, or sweep-<param>]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,

    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunArgs {
    /// Comma-separated conditions: rl, irl, rl-aff, irl-aff [default: all four]
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "one_or_many")]
    pub condition: Option<Vec<Condition>>,

    #[command(flatten)]
    #[serde(flatten)]
    pub experiment: ExperimentArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SweepArgs {
    /// Swept parameter: theta or eta [default: theta]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param: Option<SweepParam>,

    /// Comma-separated values [default: 0,0.25,0.5,0.75 for theta; 0.3,0.5,0.8,1.0 for eta]
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "one_or_many")]
    pub values: Option<Vec<f64>>,

    /// Learning condition [default: irl for theta, irl-aff for eta]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,

    #[command(flatten)]
    #[serde(flatten)]
    pub experiment: ExperimentArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ServeArgs {
    /// Listen address [default: 127.0.0.1:8080]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub addr: Option<SocketAddr>,

    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct FuseArgs {
    /// CSV rows `sentence,gestures`; `-` reads stdin. Alternative transcripts
    /// are separated by `|`, the five gesture labels by `;` or spaces.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
}

fn one_or_many<'de, D, T>(de: D) -> Result<Option<Vec<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(Option::<OneOrMany<T>>::deserialize(de)?.map(|v| match v {
        OneOrMany::One(t) => vec![t],
        OneOrMany::Many(v) => v,
    }))
}

/// Long flag names accepted anywhere, as config file keys.
fn known_keys() -> BTreeSet<String> {
    fn walk(cmd: &clap::Command, keys: &mut BTreeSet<String>) {
        for arg in cmd.get_arguments() {
            match arg.get_long() {
                Some(long) => keys.insert(long.to_string()),
                None => keys.insert(arg.get_id().as_str().replace('_', "-")),
            };
        }
        for sub in cmd.get_subcommands() {
            walk(sub, keys);
        }
    }
    let mut keys = BTreeSet::new();
    walk(&Cli::command(), &mut keys);
    for global in ["config", "help", "version"] {
        keys.remove(global);
    }
    keys
}

/// A parsed config file: a flat JSON object keyed by long flag names.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: serde_json::Map<String, serde_json::Value>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile, String> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let serde_json::Value::Object(values) = value else {
            return Err("expected a JSON object".into());
        };
        let known = known_keys();
        if let Some(bad) = values.keys().find(|k| !known.contains(k.as_str())) {
            return Err(format!("unknown key `{bad}`"));
        }
        Ok(ConfigFile { values })
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).and_then(|v| v.as_str())
    }

    /// Fills the fields missing from `flags` with the file's values.
    pub fn overlay<T: Serialize + DeserializeOwned>(&self, flags: T) -> Result<T, String> {
        let mut merged = self.values.clone();
        match serde_json::to_value(flags).map_err(|e| e.to_string())? {
            serde_json::Value::Object(given) => merged.extend(given),
            _ => unreachable!("argument structs serialize to objects"),
        }
        serde_json::from_value(serde_json::Value::Object(merged)).map_err(|e| e.to_string())
    }
}
