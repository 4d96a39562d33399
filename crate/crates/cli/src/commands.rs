use std::fs;
use std::io::{self, Read};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use affordance_irl::advisor::ChannelNoise;
use affordance_irl::affordance::{
    generate_dataset, train, write_dataset_csv, AffordanceNet, FailurePredictor, FailureTable, Fidelity,
    TrainConfig,
};
use affordance_irl::experiment::{
    emit_plot, persist_csv, persist_json, welch_one_sided, Condition, ExperimentConfig, Lab, LearningCurve,
    SweepParam, WelchTest,
};
use affordance_irl::fusion::{audio_recognize, gesture_recognize, integrate, CommandLexicon};
use affordance_irl::learner::LearnerConfig;
use affordance_irl::scenario::{Action, OptimalPolicy, StateSpace};
use affordance_irl::Error;
use affordance_irl_service::Environment;
use serde::Serialize;

use crate::args::{
    Cli, Command, ConfigFile, EnumerateArgs, ExperimentArgs, FuseArgs, NetArgs, RunArgs, ServeArgs, SweepArgs,
    TrainArgs,
};

/// Counts reported for the original version of the task.
pub const REFERENCE_STATES: usize = 53;
pub const REFERENCE_SAMPLES: usize = 371;

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or config values.
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Lexicon(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

struct Context {
    out_dir: PathBuf,
    lexicon: CommandLexicon,
    file: ConfigFile,
}

impl Context {
    fn output(&self, name: &str) -> Result<PathBuf, Failure> {
        fs::create_dir_all(&self.out_dir)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", self.out_dir.display())))?;
        Ok(self.out_dir.join(name))
    }

    fn overlay<T: Serialize + serde::de::DeserializeOwned>(&self, flags: T) -> Result<T, Failure> {
        self.file.overlay(flags).map_err(|e| Failure::Usage(format!("config file: {e}")))
    }
}

pub fn dispatch(cli: Cli) -> Outcome {
    let file = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            ConfigFile::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => ConfigFile::default(),
    };
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| file.get_str("out-dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("airl-out"));
    let lexicon = match cli.lexicon.clone().or_else(|| file.get_str("lexicon").map(PathBuf::from)) {
        Some(path) => CommandLexicon::load(path)?,
        None => CommandLexicon::default(),
    };
    let ctx = Context { out_dir, lexicon, file };
    match cli.command {
        Command::Enumerate(args) => enumerate(&ctx, ctx.overlay(args)?),
        Command::TrainAffordances(args) => train_affordances(&ctx, ctx.overlay(args)?),
        Command::Run(args) => run(&ctx, ctx.overlay(args)?),
        Command::Sweep(args) => sweep(&ctx, ctx.overlay(args)?),
        Command::Serve(args) => serve(&ctx, ctx.overlay(args)?),
        Command::Fuse(args) => fuse(&ctx, ctx.overlay(args)?),
    }
}

fn enumerate(_ctx: &Context, args: EnumerateArgs) -> Outcome {
    let start = Instant::now();
    let space = StateSpace::enumerate();
    let dataset = generate_dataset(&space);
    tracing::info!(elapsed = ?start.elapsed(), "enumerated");
    let policy = OptimalPolicy::solve(&space, LearnerConfig::default().gamma);

    println!("{:>5}  {:<40} optimal", "index", "state");
    for (i, s) in space.states().iter().enumerate() {
        let best = policy.action(s).map_or("-", Action::name);
        println!("{i:>5}  {:<40} {best}", s.to_string());
    }
    println!("states: {} (reference: {REFERENCE_STATES})", space.len());
    println!("samples: {} (reference: {REFERENCE_SAMPLES})", dataset.len());
    if let Some(path) = args.dataset {
        write_dataset_csv(&dataset, &path)?;
        tracing::info!(path = %path.display(), "dataset written");
    }
    Ok(())
}

fn train_config(epochs: Option<usize>, seed: Option<u64>) -> Result<TrainConfig, Failure> {
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: epochs.unwrap_or(defaults.epochs),
        seed: seed.unwrap_or(defaults.seed),
        ..defaults
    };
    if cfg.epochs == 0 {
        return Err(Failure::Usage("epochs must be at least 1".into()));
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct TrainingSummary {
    epochs: usize,
    seed: u64,
    epochs_run: usize,
    converged: bool,
    mse: f64,
    fidelity: Fidelity,
    effect_accuracy: f64,
    failure_accuracy: f64,
    seconds: f64,
    sse_history: Vec<f64>,
}

fn train_affordances(ctx: &Context, args: TrainArgs) -> Outcome {
    let cfg = train_config(args.epochs, args.net_seed)?;
    let space = StateSpace::enumerate();
    let samples = generate_dataset(&space);
    let start = Instant::now();
    let report = train(&samples, &cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let fidelity = Fidelity::measure(&report.net, &space);

    let weights = match args.weights {
        Some(p) => p,
        None => ctx.output("affordance-net.json")?,
    };
    let report_path = match args.report {
        Some(p) => p,
        None => ctx.output("affordance-report.json")?,
    };
    report.net.save(&weights)?;
    let summary = TrainingSummary {
        epochs: cfg.epochs,
        seed: cfg.seed,
        epochs_run: report.epochs_run,
        converged: report.converged,
        mse: report.mse,
        fidelity,
        effect_accuracy: fidelity.effect_accuracy(),
        failure_accuracy: fidelity.failure_accuracy(),
        seconds,
        sse_history: report.sse_history,
    };
    persist_json(&summary, &report_path)?;

    println!("epochs run: {} of {}", report.epochs_run, cfg.epochs);
    println!("mse: {:.3e}", report.mse);
    println!(
        "effect accuracy: {}/{} ({:.2}%)",
        fidelity.effect_matches,
        fidelity.samples,
        100.0 * fidelity.effect_accuracy()
    );
    println!(
        "failure accuracy: {}/{} ({:.2}%)",
        fidelity.failure_matches,
        fidelity.samples,
        100.0 * fidelity.failure_accuracy()
    );
    println!("weights: {}", weights.display());
    println!("report: {}", report_path.display());
    Ok(())
}

/// Loads the network named by `--weights`, or trains one.
fn affordances(args: &NetArgs, space: &StateSpace) -> Result<Arc<dyn FailurePredictor>, Failure> {
    let net = match &args.weights {
        Some(path) => AffordanceNet::load(path)?,
        None => {
            let cfg = train_config(args.epochs, args.net_seed)?;
            tracing::info!(epochs = cfg.epochs, seed = cfg.seed, "training the affordance network");
            let report = train(&generate_dataset(space), &cfg)?;
            let fidelity = Fidelity::measure(&report.net, space);
            tracing::info!(
                effect = fidelity.effect_accuracy(),
                failure = fidelity.failure_accuracy(),
                "affordance network ready"
            );
            report.net
        }
    };
    Ok(Arc::new(FailureTable::new(space, net)))
}

fn experiment_config(args: &ExperimentArgs, condition: Condition) -> Result<ExperimentConfig, Failure> {
    let d = ExperimentConfig::default();
    let l = LearnerConfig::default();
    let n = ChannelNoise::default();
    let cfg = ExperimentConfig {
        condition,
        agents: args.agents.unwrap_or(d.agents),
        episodes: args.episodes.unwrap_or(d.episodes),
        learner: LearnerConfig {
            alpha: args.alpha.unwrap_or(l.alpha),
            gamma: args.gamma.unwrap_or(l.gamma),
            epsilon: args.epsilon.unwrap_or(l.epsilon),
            feedback_probability: args.feedback_probability.unwrap_or(l.feedback_probability),
            theta_min: args.theta.unwrap_or(l.theta_min),
            eta: args.eta.unwrap_or(l.eta),
            max_steps_per_episode: args.max_steps.unwrap_or(l.max_steps_per_episode),
            ..l
        },
        noise: ChannelNoise {
            audio_char_error_rate: args.audio_noise.unwrap_or(n.audio_char_error_rate),
            vision_label_error_rate: args.vision_noise.unwrap_or(n.vision_label_error_rate),
            hypothesis_count: args.hypotheses.unwrap_or(n.hypothesis_count),
        },
        smoothing_window: args.smoothing.unwrap_or(d.smoothing_window),
        master_seed: args.seed.unwrap_or(d.master_seed),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn lab(ctx: &Context, args: &ExperimentArgs, conditions: &[Condition]) -> Result<Lab, Failure> {
    let space = StateSpace::enumerate();
    let model = if conditions.iter().any(|c| c.uses_affordances()) {
        Some(affordances(&args.net, &space)?)
    } else {
        None
    };
    Ok(Lab::new(ctx.lexicon.clone(), model))
}

#[derive(Serialize)]
struct CurveSummary {
    condition: Condition,
    param: String,
    mean_total: f64,
    total_stderr: f64,
    final_smoothed: f64,
    /// First episode, counted from 1, whose smoothed reward is within 5% of the best.
    episode_reaching_95: Option<usize>,
}

#[derive(Serialize)]
struct Comparison {
    lower: String,
    higher: String,
    #[serde(flatten)]
    test: WelchTest,
}

#[derive(Serialize)]
struct Summary {
    master_seed: u64,
    agents: usize,
    episodes: usize,
    curves: Vec<CurveSummary>,
    /// One-sided tests that each curve collects more than the one before it.
    comparisons: Vec<Comparison>,
}

fn write_results(ctx: &Context, name: &str, title: &str, cfg: &ExperimentConfig, curves: &[LearningCurve]) -> Outcome {
    let csv = ctx.output(&format!("{name}.csv"))?;
    persist_csv(curves, &csv)?;
    emit_plot(curves, title, ctx.output(&format!("{name}.svg"))?)?;
    let summary = Summary {
        master_seed: cfg.master_seed,
        agents: cfg.agents,
        episodes: cfg.episodes,
        curves: curves
            .iter()
            .map(|c| CurveSummary {
                condition: c.condition,
                param: c.param.clone(),
                mean_total: c.mean_total(),
                total_stderr: c.total_stderr(),
                final_smoothed: c.smoothed.last().copied().unwrap_or(0.0),
                episode_reaching_95: c.episodes_to_reach(0.95).map(|i| i + 1),
            })
            .collect(),
        comparisons: curves
            .windows(2)
            .map(|w| Comparison {
                lower: w[0].label(),
                higher: w[1].label(),
                test: welch_one_sided(&w[0].agent_totals, &w[1].agent_totals),
            })
            .collect(),
    };
    persist_json(&summary, ctx.output(&format!("{name}.json"))?)?;

    println!("{:<28} {:>14} {:>10} {:>8}", "curve", "total reward", "stderr", "to 95%");
    for c in &summary.curves {
        let to95 = c.episode_reaching_95.map_or("-".to_string(), |e| e.to_string());
        println!(
            "{:<28} {:>14.3} {:>10.3} {:>8}",
            format!("{} {}", c.condition, c.param),
            c.mean_total,
            c.total_stderr,
            to95
        );
    }
    for cmp in &summary.comparisons {
        println!("p({} > {}) = {:.3e}", cmp.higher, cmp.lower, cmp.test.p_value);
    }
    println!("results: {}", csv.display());
    Ok(())
}

fn run(ctx: &Context, args: RunArgs) -> Outcome {
    let conditions = args.condition.unwrap_or_else(|| Condition::ALL.to_vec());
    if conditions.is_empty() {
        return Err(Failure::Usage("no condition given".into()));
    }
    let configs = conditions
        .iter()
        .map(|&c| experiment_config(&args.experiment, c))
        .collect::<Result<Vec<_>, _>>()?;
    let lab = lab(ctx, &args.experiment, &conditions)?;
    let mut curves = Vec::with_capacity(configs.len());
    for cfg in &configs {
        let start = Instant::now();
        curves.push(lab.run_condition(cfg)?);
        tracing::info!(condition = %cfg.condition, elapsed = ?start.elapsed(), "condition finished");
    }
    let name = args.experiment.name.as_deref().unwrap_or("run");
    write_results(ctx, name, "Learning curves", &configs[0], &curves)
}

fn sweep(ctx: &Context, args: SweepArgs) -> Outcome {
    let param = args.param.unwrap_or(SweepParam::Theta);
    let (default_values, default_condition) = match param {
        SweepParam::Theta => (vec![0.0, 0.25, 0.5, 0.75], Condition::Irl),
        SweepParam::Eta => (vec![0.3, 0.5, 0.8, 1.0], Condition::IrlAff),
    };
    let values = args.values.unwrap_or(default_values);
    if values.is_empty() {
        return Err(Failure::Usage("no sweep values given".into()));
    }
    let condition = args.condition.unwrap_or(default_condition);
    let base = experiment_config(&args.experiment, condition)?;
    let lab = lab(ctx, &args.experiment, &[condition])?;
    let curves: Vec<LearningCurve> = lab.sweep(&base, param, &values)?.into_iter().map(|(_, c)| c).collect();
    let param_name = match param {
        SweepParam::Theta => "theta",
        SweepParam::Eta => "eta",
    };
    let name = args
        .experiment
        .name
        .clone()
        .unwrap_or_else(|| format!("sweep-{param_name}"));
    write_results(ctx, &name, &format!("{param_name} sweep, {condition}"), &base, &curves)
}

fn serve(ctx: &Context, args: ServeArgs) -> Outcome {
    let addr = args.addr.unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 8080)));
    let space = StateSpace::enumerate();
    let model = affordances(&args.net, &space)?;
    let env = Environment::new(ctx.lexicon.clone(), Some(model));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Failure::Runtime(format!("{addr}: {e}")))?;
        let bound = listener.local_addr().map_err(|e| Failure::Runtime(e.to_string()))?;
        println!("serving on http://{bound}");
        affordance_irl_service::serve_on(listener, env)
            .await
            .map_err(|e| Failure::Runtime(format!("{bound}: {e}")))
    })
}

#[derive(Serialize)]
struct FusedRow {
    sentence: String,
    gestures: String,
    audio_label: Action,
    audio_confidence: f64,
    vision_label: Action,
    vision_confidence: f64,
    label: Action,
    confidence: f64,
    likeliness: f64,
    congruent: bool,
}

fn parse_gestures(field: &str) -> Result<Vec<Action>, Error> {
    let parts: Vec<&str> = if field.contains(';') {
        field.split(';').collect()
    } else {
        field.split_whitespace().collect()
    };
    parts.into_iter().map(str::parse).collect()
}

fn fuse(ctx: &Context, args: FuseArgs) -> Outcome {
    let input = args.input.unwrap_or_else(|| PathBuf::from("-"));
    let text = read_input(&input)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = csv::Writer::from_writer(io::stdout().lock());
    let write_err = |e: csv::Error| Failure::Runtime(format!("stdout: {e}"));
    for record in reader.records() {
        let record = record.map_err(|e| Failure::Runtime(format!("{}: {e}", input.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |msg: String| Failure::Runtime(format!("{}:{line}: {msg}", input.display()));
        if record.len() != 2 {
            return Err(bad(format!("expected `sentence,gestures`, got {} fields", record.len())));
        }
        let hypotheses: Vec<&str> = record[0].split('|').map(str::trim).collect();
        let window = parse_gestures(&record[1]).map_err(|e| bad(e.to_string()))?;
        let audio = audio_recognize(&hypotheses, &ctx.lexicon).map_err(|e| bad(e.to_string()))?;
        let vision = gesture_recognize(&window).map_err(|e| bad(e.to_string()))?;
        let fused = integrate(&audio, &vision);
        out.serialize(FusedRow {
            sentence: record[0].to_string(),
            gestures: window.iter().map(|a| a.name()).collect::<Vec<_>>().join(";"),
            audio_label: audio.label,
            audio_confidence: audio.confidence,
            vision_label: vision.label,
            vision_confidence: vision.confidence,
            label: fused.label,
            confidence: fused.confidence,
            likeliness: fused.likeliness,
            congruent: fused.congruent,
        })
        .map_err(write_err)?;
    }
    out.flush().map_err(|e| Failure::Runtime(format!("stdout: {e}")))
}

fn read_input(path: &Path) -> Result<String, Failure> {
    let mut text = String::new();
    if path == Path::new("-") {
        io::stdin()
            .read_to_string(&mut text)
            .map_err(|e| Failure::Runtime(format!("stdin: {e}")))?;
    } else {
        text = fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(text)
}
