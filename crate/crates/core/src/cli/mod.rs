//! Command-line front end: one subcommand per experiment kind.
//!
//! Every run writes into a staging directory next to `--out` and renames it
//! into place on success, so an output directory is either complete or absent.
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

mod config;

pub use config::{load_config, parse_config, ConfigError, FitSection, PolicySpec, PomdpSection, RunConfig, ThresholdSection};

use crate::eval::{
    automix_calibration, pair_corpus, pomdp_spec_for, sweep_lambda_agg, sweep_lambda_pomdp,
    sweep_threshold, Bench, CurveRun, Evaluation, ReplayPair,
};
use crate::metrics::{metric_report, min_score_auc, write_curve_csv};
use crate::policy::{
    fit_automix_bins, AlwaysContinue, AlwaysRegenerate, AutomixRouter, OutcomeClass, RandomRegenerate, Router,
    ThresholdPolicy,
};
use crate::pomdp::{
    collect_labeled_steps, estimate_accuracies, labeled_from_traces, solve, table_from_policy, Belief,
    ObservationModel, PomdpRouter, PomdpSpec,
};
use crate::rl::{write_history_csv, AggRouter, PolicyNet};
use crate::seed::SeedTree;
use crate::sim::{replay_load, EnvConfig};
use crate::trace::{Origin, TraceState, Truth};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Debug, Parser)]
#[command(name = "steproute", version, about = "Step-level routing between a cheap and an expensive generator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Overrides {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; replaced atomically on success.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluation episodes per sweep point.
    #[arg(long)]
    pub episodes: Option<u64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Sweep the threshold ladder on the simulator.
    SweepThr(Overrides),
    /// Train one aggregate-feature policy per lambda and evaluate the sweep.
    TrainAgg(Overrides),
    /// Solve one belief-space policy per lambda and evaluate the sweep.
    SolvePomdp(Overrides),
    /// Fit the score observation model.
    FitObs(Overrides),
    /// Evaluate configured policies on the simulator or a corpus.
    Eval(Overrides),
    /// Summarize a recorded corpus and sweep thresholds over it.
    Replay(Overrides),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    SweepThr,
    TrainAgg,
    SolvePomdp,
    FitObs,
    Eval,
    Replay,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SweepThr => "sweep-thr",
            Mode::TrainAgg => "train-agg",
            Mode::SolvePomdp => "solve-pomdp",
            Mode::FitObs => "fit-obs",
            Mode::Eval => "eval",
            Mode::Replay => "replay",
        }
    }
}

impl Command {
    pub fn split(&self) -> (Mode, &Overrides) {
        match self {
            Command::SweepThr(o) => (Mode::SweepThr, o),
            Command::TrainAgg(o) => (Mode::TrainAgg, o),
            Command::SolvePomdp(o) => (Mode::SolvePomdp, o),
            Command::FitObs(o) => (Mode::FitObs, o),
            Command::Eval(o) => (Mode::Eval, o),
            Command::Replay(o) => (Mode::Replay, o),
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

fn runtime<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

/// Parses arguments, runs, and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli.command) {
        Ok(out) => {
            println!("{}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Loads the config, applies overrides and runs the subcommand. Returns the
/// output directory.
pub fn run(command: &Command) -> Result<PathBuf, CliError> {
    let (mode, o) = command.split();
    let mut cfg = load_config(&o.config)?;
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &o.out {
        cfg.out = Some(out.clone());
    }
    if let Some(n) = o.episodes {
        cfg.episodes = n;
    }
    cfg.validate_for(mode)?;
    let env = cfg.environment()?;
    let out = cfg.out.clone().expect("validated");
    let mut stage = Staging::new(&out).map_err(runtime("staging"))?;
    let result = execute(mode, &cfg, &env, &mut stage).and_then(|()| {
        let config_json = serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n";
        stage.write("config.json", config_json.as_bytes())?;
        stage.write_manifest(mode, &cfg, config_json.as_bytes())
    });
    match result {
        Ok(()) => {
            stage.promote().map_err(runtime("promoting output"))?;
            Ok(out)
        }
        Err(e) => {
            stage.discard();
            Err(e)
        }
    }
}

/// Output files collected under a staging directory.
struct Staging {
    dir: PathBuf,
    target: PathBuf,
    files: BTreeMap<String, String>,
}

impl Staging {
    fn new(target: &Path) -> std::io::Result<Self> {
        let name = target
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into());
        let dir = target.with_file_name(format!(".{name}.staging"));
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, target: target.to_path_buf(), files: BTreeMap::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        std::fs::write(self.dir.join(name), bytes).map_err(runtime(name))?;
        self.files.insert(name.to_string(), hex(&Sha256::digest(bytes)));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(runtime(name))? + "\n";
        self.write(name, text.as_bytes())
    }

    fn write_manifest(&mut self, mode: Mode, cfg: &RunConfig, config_json: &[u8]) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            tool: &'static str,
            version: &'static str,
            command: &'static str,
            seed: u64,
            episodes: u64,
            config_sha256: String,
            files: &'a BTreeMap<String, String>,
        }
        let files = self.files.clone();
        let m = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: mode.name(),
            seed: cfg.seed,
            episodes: cfg.episodes,
            config_sha256: hex(&Sha256::digest(config_json)),
            files: &files,
        };
        self.write_json("manifest.json", &m)
    }

    fn promote(&self) -> std::io::Result<()> {
        if self.target.exists() {
            std::fs::remove_dir_all(&self.target)?;
        }
        std::fs::rename(&self.dir, &self.target)
    }

    fn discard(&self) {
        let _ = std::fs::remove_dir_all(&self.dir);
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_curve(stage: &mut Staging, run: &CurveRun) -> Result<(), CliError> {
    let curve = run.curve();
    let mut csv = Vec::new();
    write_curve_csv(&mut csv, &curve.points).map_err(runtime("curve.csv"))?;
    stage.write("curve.csv", &csv)?;
    stage.write_json("report.json", &metric_report(&curve))?;
    let summaries: Vec<EvalSummary> = std::iter::once(&run.weak)
        .chain(std::iter::once(&run.strong))
        .chain(&run.points)
        .map(EvalSummary::from)
        .collect();
    stage.write_json("evaluations.json", &summaries)
}

#[derive(Serialize)]
struct EvalSummary {
    label: String,
    control: f64,
    episodes: usize,
    accuracy: f64,
    mean_strong_tokens: f64,
    strong_tokens_se: f64,
    regen_rate: f64,
}

impl From<&Evaluation> for EvalSummary {
    fn from(ev: &Evaluation) -> Self {
        Self {
            label: ev.label.clone(),
            control: ev.control,
            episodes: ev.episodes(),
            accuracy: ev.accuracy(),
            mean_strong_tokens: ev.mean_strong_tokens(),
            strong_tokens_se: ev.strong_tokens_se(),
            regen_rate: ev.regen_rate(),
        }
    }
}

fn load_corpus(path: &Path) -> Result<Vec<TraceState>, CliError> {
    replay_load(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ObservationModel, CliError> {
    let text = std::fs::read_to_string(path).map_err(runtime(&path.display().to_string()))?;
    ObservationModel::from_json(&text).map_err(runtime(&path.display().to_string()))
}

/// Observation model from the configured file, the corpus, or simulation.
fn obtain_model(cfg: &RunConfig, env: &EnvConfig) -> Result<ObservationModel, CliError> {
    if let Some(path) = &cfg.pomdp.model {
        return load_model(path);
    }
    let rows = match &cfg.corpus {
        Some(path) => labeled_from_traces(&load_corpus(path)?),
        None => collect_labeled_steps(
            env,
            &RandomRegenerate { p: cfg.fit.behavior_regen_prob },
            cfg.fit.episodes,
            SeedTree::new(cfg.seed).named("fit"),
        )
        .map_err(runtime("collecting observations"))?,
    };
    ObservationModel::fit(&rows).map_err(runtime("fitting observation model"))
}

/// Known simulator accuracies, or estimates from a corpus.
fn corpus_spec(traces: &[TraceState], lambda: f64) -> Result<PomdpSpec, CliError> {
    let (p_w, p_s) = estimate_accuracies(traces).map_err(runtime("estimating accuracies"))?;
    let strong: Vec<f64> = traces
        .iter()
        .flat_map(|t| t.steps())
        .filter(|s| s.origin == Origin::Strong)
        .map(|s| f64::from(s.token_count))
        .collect();
    let mean = strong.iter().sum::<f64>() / strong.len().max(1) as f64;
    let mut spec = PomdpSpec::new(p_w, p_s, lambda, mean.max(1.0));
    spec.max_steps = traces.iter().map(|t| t.max_steps()).max().unwrap_or(spec.max_steps);
    Ok(spec)
}

fn replay_calibration(pairs: &[ReplayPair]) -> Vec<(f64, OutcomeClass)> {
    pairs
        .iter()
        .flat_map(|p| p.weak.steps().iter().zip(p.strong.steps()))
        .map(|(w, s)| {
            let class = match (w.truth, s.truth) {
                (Some(Truth::Correct), _) => OutcomeClass::SolvableByWeak,
                (_, Some(Truth::Correct)) => OutcomeClass::SolvableOnlyByStrong,
                _ => OutcomeClass::UnsolvableByBoth,
            };
            (w.score, class)
        })
        .collect()
}

fn execute(mode: Mode, cfg: &RunConfig, env: &EnvConfig, stage: &mut Staging) -> Result<(), CliError> {
    let seed = SeedTree::new(cfg.seed);
    match mode {
        Mode::SweepThr => {
            let run = sweep_threshold(env, &cfg.threshold.ladder, cfg.episodes, seed, cfg.threshold.takeover)
                .map_err(runtime("threshold sweep"))?;
            write_curve(stage, &run)
        }
        Mode::TrainAgg => {
            let lambdas = cfg.lambda_ladder();
            let (run, trained) =
                sweep_lambda_agg(env, &lambdas, &cfg.train, cfg.episodes, seed).map_err(runtime("training"))?;
            for (i, t) in trained.iter().enumerate() {
                stage.write(&format!("agg_{i}.json"), t.net.save_json().as_bytes())?;
                let mut csv = Vec::new();
                write_history_csv(&mut csv, &t.history).map_err(runtime("history"))?;
                stage.write(&format!("history_{i}.csv"), &csv)?;
            }
            write_curve(stage, &run)
        }
        Mode::FitObs => {
            let model = obtain_model(cfg, env)?;
            stage.write("obs_model.json", model.to_json().as_bytes())?;
            let (p_weak, p_strong, source) = match &cfg.corpus {
                Some(path) => {
                    let (w, s) = estimate_accuracies(&load_corpus(path)?).map_err(runtime("estimating accuracies"))?;
                    (w, s, "corpus")
                }
                None => (env.p_weak, env.p_strong, "simulator"),
            };
            #[derive(Serialize)]
            struct FitSummary {
                source: &'static str,
                p_weak: f64,
                p_strong: f64,
                samples: [usize; 3],
                bandwidths: [f64; 3],
            }
            let classes = [crate::sim::LatentClass::S0, crate::sim::LatentClass::S1, crate::sim::LatentClass::S2];
            let mut samples = [0; 3];
            let mut bandwidths = [0.0; 3];
            for (i, c) in classes.into_iter().enumerate() {
                let d = model.class(c).map_err(runtime("model"))?;
                samples[i] = d.n_samples();
                bandwidths[i] = d.bandwidth();
            }
            stage.write_json("fit_summary.json", &FitSummary { source, p_weak, p_strong, samples, bandwidths })
        }
        Mode::SolvePomdp => {
            let model = Arc::new(obtain_model(cfg, env)?);
            stage.write("obs_model.json", model.to_json().as_bytes())?;
            let (run, routers) = sweep_lambda_pomdp(
                env,
                model,
                &cfg.lambda_ladder(),
                &cfg.pomdp.solve,
                cfg.pomdp.trigger,
                cfg.episodes,
                seed,
            )
            .map_err(runtime("pomdp sweep"))?;
            if let Some(res) = cfg.pomdp.lookup_resolution {
                if res < 2 {
                    return Err(ConfigError { path: "pomdp.lookup_resolution".into(), message: "must be at least 2".into() }.into());
                }
                for (i, r) in routers.iter().enumerate() {
                    stage.write_json(&format!("lookup_{i}.json"), &table_from_policy(&r.policy, res))?;
                }
            }
            write_curve(stage, &run)
        }
        Mode::Eval => {
            let corpus = cfg.corpus.as_deref().map(load_corpus).transpose()?;
            let pairs = corpus.as_deref().map(pair_corpus).transpose().map_err(runtime("pairing corpus"))?;
            let routers = build_routers(cfg, env, corpus.as_deref(), pairs.as_deref())?;
            let refs: Vec<(f64, &dyn Router)> = routers.iter().map(|(c, r)| (*c, r.as_ref())).collect();
            let bench = match &pairs {
                Some(p) => Bench::Replay { pairs: p, seed },
                None => Bench::Sim { env, episodes: cfg.episodes, seed },
            };
            let run = bench.run_curve(&refs).map_err(runtime("evaluation"))?;
            write_curve(stage, &run)
        }
        Mode::Replay => {
            let path = cfg.corpus.as_deref().expect("validated");
            let traces = load_corpus(path)?;
            let pairs = pair_corpus(&traces).map_err(runtime("pairing corpus"))?;
            let weak: Vec<TraceState> = pairs.iter().map(|p| p.weak.clone()).collect();
            #[derive(Serialize)]
            struct CorpusSummary {
                traces: usize,
                queries: usize,
                steps: usize,
                weak_step_accuracy: f64,
                strong_step_accuracy: f64,
                min_score_auc: Option<f64>,
            }
            let (w, s) = estimate_accuracies(&traces).map_err(runtime("estimating accuracies"))?;
            stage.write_json(
                "summary.json",
                &CorpusSummary {
                    traces: traces.len(),
                    queries: pairs.len(),
                    steps: weak.iter().map(|t| t.steps().len()).sum(),
                    weak_step_accuracy: w,
                    strong_step_accuracy: s,
                    min_score_auc: min_score_auc(&weak).ok(),
                },
            )?;
            let routers: Vec<ThresholdPolicy> = cfg
                .threshold
                .ladder
                .iter()
                .map(|&k| if cfg.threshold.takeover { ThresholdPolicy::one_step_takeover(k) } else { ThresholdPolicy::new(k) })
                .collect();
            let refs: Vec<(f64, &dyn Router)> = routers.iter().map(|r| (r.k, r as &dyn Router)).collect();
            let run = Bench::Replay { pairs: &pairs, seed }.run_curve(&refs).map_err(runtime("replay sweep"))?;
            write_curve(stage, &run)
        }
    }
}

type BoxedRouter = Box<dyn Router>;

fn build_routers(
    cfg: &RunConfig,
    env: &EnvConfig,
    corpus: Option<&[TraceState]>,
    pairs: Option<&[ReplayPair]>,
) -> Result<Vec<(f64, BoxedRouter)>, CliError> {
    let seed = SeedTree::new(cfg.seed);
    let mut out: Vec<(f64, BoxedRouter)> = Vec::new();
    for (i, spec) in cfg.policies.iter().enumerate() {
        let routed: (f64, BoxedRouter) = match spec {
            PolicySpec::AlwaysContinue => (0.0, Box::new(AlwaysContinue)),
            PolicySpec::AlwaysRegenerate => (1.0, Box::new(AlwaysRegenerate)),
            PolicySpec::Threshold { k, takeover } => {
                let p = if *takeover { ThresholdPolicy::one_step_takeover(*k) } else { ThresholdPolicy::new(*k) };
                (*k, Box::new(p))
            }
            PolicySpec::Agg { checkpoint, mode, control } => {
                let text = std::fs::read_to_string(checkpoint).map_err(runtime(&checkpoint.display().to_string()))?;
                let net = PolicyNet::load_json(&text).map_err(runtime(&checkpoint.display().to_string()))?;
                (*control, Box::new(AggRouter::new(net, *mode)))
            }
            PolicySpec::Pomdp { model, lambda, trigger } => {
                let model = Arc::new(load_model(model)?);
                let spec = match corpus {
                    Some(traces) => corpus_spec(traces, *lambda)?,
                    None => pomdp_spec_for(env, *lambda),
                };
                let policy = solve(&spec, &model, &Belief::initial(), &cfg.pomdp.solve).map_err(runtime("solving"))?;
                (*lambda, Box::new(PomdpRouter::new(spec, model, Arc::new(policy), *trigger)))
            }
            PolicySpec::Automix { lambda, bins, calibration_episodes } => {
                let (labels, expected) = match pairs {
                    Some(p) => {
                        let spec = corpus_spec(corpus.expect("pairs imply corpus"), *lambda)?;
                        (replay_calibration(p), spec.expected_strong_tokens)
                    }
                    None => (
                        automix_calibration(env, *calibration_episodes, seed.named("automix").index(i as u64))
                            .map_err(runtime("automix calibration"))?,
                        env.expected_strong_tokens(),
                    ),
                };
                let classifier = fit_automix_bins(&labels, *bins).map_err(runtime("automix fit"))?;
                (
                    *lambda,
                    Box::new(AutomixRouter { classifier, lambda: *lambda, expected_strong_tokens: expected }),
                )
            }
        };
        out.push(routed);
    }
    Ok(out)
}
