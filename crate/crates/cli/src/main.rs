//! `bmicl`: seeded experiment runs over recorded or synthetic sessions.

mod config;
mod summary;
mod tasks;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bmicl::cl::{report_diff, StrategyKind, WorkflowReport};
use bmicl::data::{generate_synthetic, generate_synthetic_raw, save_raw_sessions, save_sessions, SessionSequence};
use bmicl::dsp::FS_HZ;
use bmicl::odl::OdlStrategy;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;

use config::{read_config, ConfigError, ExperimentConfig, Synthetic, Task};

#[derive(Parser)]
#[command(name = "bmicl", version = tasks::VERSION, about = "Inter-session continual learning experiments")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Any task, chosen with --task or the config file.
    Run(RunArgs),
    /// Within-session k-fold cross-validation of every session.
    Cv(RunArgs),
    /// Chain fine-tuning without mitigation.
    Tl(RunArgs),
    /// Chain fine-tuning with a continual-learning strategy.
    Cl(RunArgs),
    /// Float training, quantization-aware training and int8 conversion.
    Qat(RunArgs),
    /// Head-only adaptation on a frozen int8 backbone, with memory accounting.
    Odl(RunArgs),
    /// Chain fine-tuning at every adaptation depth.
    DepthSweep(RunArgs),
    /// Write synthetic sessions to a subject directory.
    GenData(GenArgs),
    /// Per-phase metric differences between two workflow reports (a − b).
    Diff(DiffArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scenario {
    #[value(name = "binary_drift")]
    BinaryDrift,
    #[value(name = "four_class_clean")]
    FourClassClean,
}

fn parse_serde<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    s.parse().map_err(|e: bmicl::Error| e.to_string())
}

#[derive(Args)]
struct RunArgs {
    /// Experiment file (TOML, or JSON by extension); flags override it.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    /// Subject directory with session_N/manifest.json.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Generated data instead of a directory.
    #[arg(long)]
    synthetic: Option<Scenario>,
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Drift rotation per session, degrees (binary_drift).
    #[arg(long)]
    rotation_step: Option<f64>,
    /// Number of replications, seeded 0..N.
    #[arg(long, conflicts_with = "seed_list")]
    seeds: Option<u64>,
    /// Explicit replication seeds.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    er_capacity: Option<usize>,
    #[arg(long)]
    lwf_lambda: Option<f32>,
    #[arg(long)]
    lwf_temperature: Option<f32>,
    /// soft_cross_entropy or kl.
    #[arg(long, value_parser = parse_serde::<bmicl::cl::Distillation>)]
    distillation: Option<bmicl::cl::Distillation>,
    #[arg(long)]
    ewc_lambda: Option<f32>,
    /// accumulate or online.
    #[arg(long, value_parser = parse_serde::<bmicl::cl::EwcMode>)]
    ewc_mode: Option<bmicl::cl::EwcMode>,
    /// Training epochs per adaptation phase.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Trainable parameter groups during adaptation (1 = head … 6 = all).
    #[arg(long)]
    depth: Option<u8>,
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<u8>>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Shuffle trials before the train/test cut instead of cutting in time.
    #[arg(long)]
    shuffled_split: bool,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    cv_epochs: Option<usize>,
    #[arg(long)]
    fp32_epochs: Option<usize>,
    #[arg(long)]
    qat_epochs: Option<usize>,
    /// Keep replay features across epochs on device.
    #[arg(long)]
    feature_cache: bool,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "binary_drift")]
    scenario: Scenario,
    #[arg(long, default_value_t = 4)]
    sessions: usize,
    #[arg(long, default_value_t = 40)]
    trials: usize,
    #[arg(long, default_value_t = 30.0)]
    rotation_step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "S01")]
    subject: String,
    /// Store raw recordings (preprocessed on load) instead of tensors.
    #[arg(long)]
    raw: bool,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiffArgs {
    a: PathBuf,
    b: PathBuf,
    /// Also write the differences as JSON.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<bmicl::Error> for Failure {
    fn from(e: bmicl::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn synthetic_preset(s: Scenario, trials: Option<usize>, sessions: Option<usize>, step: Option<f64>) -> Synthetic {
    let (t, n) = (trials.unwrap_or(40), sessions.unwrap_or(4));
    match s {
        Scenario::BinaryDrift => Synthetic::BinaryDrift {
            trials_per_session: t,
            sessions: n,
            rotation_step_deg: step.unwrap_or(30.0),
        },
        Scenario::FourClassClean => Synthetic::FourClassClean {
            trials_per_session: t,
            sessions: n,
        },
    }
}

fn odl_strategy(k: StrategyKind) -> Result<OdlStrategy, ConfigError> {
    match k {
        StrategyKind::NaiveTl => Ok(OdlStrategy::Tl),
        StrategyKind::Er => Ok(OdlStrategy::Er),
        StrategyKind::Lwf => Ok(OdlStrategy::Lwf),
        StrategyKind::Ewc => Err(ConfigError("EWC is not available on device".into())),
        StrategyKind::Joint => Err(ConfigError("joint training has no on-device form".into())),
    }
}

/// The file (or defaults) with every given flag applied on top.
fn resolve(args: &RunArgs, fixed: Option<Task>) -> Result<ExperimentConfig, ConfigError> {
    let mut c = match &args.config {
        Some(p) => read_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(t) = fixed.or(args.task) {
        c.task = t;
    }
    if let Some(p) = &args.data {
        c.data.path = Some(p.clone());
        c.data.synthetic = None;
    }
    if let Some(s) = args.synthetic {
        c.data.synthetic = Some(synthetic_preset(s, args.trials, args.sessions, args.rotation_step));
        c.data.path = None;
    } else if let Some(syn) = &mut c.data.synthetic {
        match syn {
            Synthetic::BinaryDrift {
                trials_per_session,
                sessions,
                rotation_step_deg,
            } => {
                *trials_per_session = args.trials.unwrap_or(*trials_per_session);
                *sessions = args.sessions.unwrap_or(*sessions);
                *rotation_step_deg = args.rotation_step.unwrap_or(*rotation_step_deg);
            }
            Synthetic::FourClassClean {
                trials_per_session,
                sessions,
            } => {
                *trials_per_session = args.trials.unwrap_or(*trials_per_session);
                *sessions = args.sessions.unwrap_or(*sessions);
            }
            Synthetic::Custom { .. } => {}
        }
    }
    if c.data.path.is_none() && c.data.synthetic.is_none() {
        c.data.synthetic = Some(synthetic_preset(Scenario::BinaryDrift, args.trials, args.sessions, args.rotation_step));
    }
    if let Some(n) = args.seeds {
        c.seeds = (0..n).collect();
    }
    if let Some(s) = &args.seed_list {
        c.seeds = s.clone();
    }
    let st = &mut c.workflow.strategy;
    if let Some(k) = args.strategy {
        st.kind = k;
    }
    macro_rules! set {
        ($flag:expr, $($dst:tt)+) => {
            if let Some(v) = $flag {
                $($dst)+ = v;
            }
        };
    }
    set!(args.er_capacity, st.er_capacity);
    set!(args.lwf_lambda, st.lwf_lambda);
    set!(args.lwf_temperature, st.lwf_temperature);
    set!(args.distillation, st.distillation);
    set!(args.ewc_lambda, st.ewc_lambda);
    set!(args.ewc_mode, st.ewc_mode);
    set!(args.epochs, st.epochs);
    set!(args.batch_size, st.batch_size);
    set!(args.pretrain_epochs, c.workflow.pretrain_epochs);
    set!(args.train_fraction, c.workflow.split.train_fraction);
    set!(args.folds, c.cv.folds);
    set!(args.cv_epochs, c.cv.epochs);
    set!(args.fp32_epochs, c.qat.fp32_epochs);
    set!(args.qat_epochs, c.qat.qat_epochs);
    set!(args.depths.clone(), c.depths);
    set!(args.out.clone(), c.output);
    if let Some(lr) = args.lr {
        c.workflow.adam.lr = lr;
        c.qat.train.adam.lr = lr;
        c.odl.adam.lr = lr;
    }
    if let Some(d) = args.depth {
        c.workflow.depth = bmicl::nn::AdaptationDepth::new(d).map_err(|e| ConfigError(format!("--depth: {e}")))?;
    }
    if args.shuffled_split {
        c.workflow.split.chronological = false;
    }
    if args.feature_cache {
        c.odl.feature_cache = true;
    }
    if c.task == Task::OdlSim {
        // the strategy flags drive the on-device learner
        let st = &c.workflow.strategy;
        if args.strategy.is_some() {
            c.odl.strategy = odl_strategy(st.kind)?;
        }
        set!(args.er_capacity, c.odl.er_capacity);
        set!(args.lwf_lambda, c.odl.lwf_lambda);
        set!(args.lwf_temperature, c.odl.lwf_temperature);
        set!(args.distillation, c.odl.distillation);
        set!(args.epochs, c.odl.epochs);
        set!(args.batch_size, c.odl.batch_size);
    }
    c.validate()?;
    Ok(c)
}

fn run(args: &RunArgs, fixed: Option<Task>) -> Result<(), Failure> {
    let cfg = resolve(args, fixed)?;
    let root = cfg.output.join(cfg.task.name());
    std::fs::create_dir_all(&root)?;
    std::fs::write(root.join("config.json"), serde_json::to_string_pretty(&cfg).map_err(|e| Failure::Run(e.to_string()))?)?;
    let shared: Option<SessionSequence> = match &cfg.data.path {
        Some(_) => Some(cfg.sessions(0)?),
        None => None,
    };
    log::info!("{} over {} seed(s) -> {}", cfg.task.name(), cfg.seeds.len(), root.display());
    let results: Vec<(u64, bmicl::Result<tasks::Outcome>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let out = (|| {
                let generated;
                let seq = match &shared {
                    Some(s) => s,
                    None => {
                        generated = cfg.sessions(seed)?;
                        &generated
                    }
                };
                tasks::run_seed(&cfg, seq, seed, &root.join(format!("seed_{seed}")))
            })();
            log::info!("seed {seed}: {}", if out.is_ok() { "done" } else { "failed" });
            (seed, out)
        })
        .collect();
    let mut outcomes = Vec::new();
    let mut failed = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(o) => outcomes.push((seed, o)),
            Err(e) => failed.push(format!("seed {seed}: {e}")),
        }
    }
    if !outcomes.is_empty() {
        summary::summarize(&cfg, &outcomes, &root)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(failed.join("\n")))
    }
}

fn gen_data(a: &GenArgs) -> Result<(), Failure> {
    let gen = synthetic_preset(a.scenario, Some(a.trials), Some(a.sessions), Some(a.rotation_step)).generator(a.seed);
    if a.raw {
        save_raw_sessions(&generate_synthetic_raw(&gen)?, &gen.class_names(), &a.out, &a.subject)?;
    } else {
        save_sessions(&generate_synthetic(&gen)?, &a.out, &a.subject, FS_HZ)?;
    }
    println!("wrote {} sessions of {} trials to {}", a.sessions, a.trials, a.out.display());
    Ok(())
}

/// A bare workflow report or the `result` of a run report.
fn read_workflow(path: &Path) -> Result<WorkflowReport, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
    let inner = match v.get("result") {
        Some(r) if v.get("experiment").is_some() => r.clone(),
        _ => v,
    };
    WorkflowReport::from_json(&inner.to_string()).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))
}

fn diff(a: &DiffArgs) -> Result<(), Failure> {
    let ra = read_workflow(&a.a)?;
    let rb = read_workflow(&a.b)?;
    let d = report_diff(&ra, &rb)?;
    print!("{}", summary::diff_table(&d));
    if let Some(p) = &a.out {
        std::fs::write(p, serde_json::to_string_pretty(&d).map_err(|e| Failure::Run(e.to_string()))?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Run(a) => run(a, None),
        Command::Cv(a) => run(a, Some(Task::WithinSessionCv)),
        Command::Tl(a) => run(a, Some(Task::TlWorkflow)),
        Command::Cl(a) => run(a, Some(Task::ClWorkflow)),
        Command::Qat(a) => run(a, Some(Task::Qat)),
        Command::Odl(a) => run(a, Some(Task::OdlSim)),
        Command::DepthSweep(a) => run(a, Some(Task::DepthSweep)),
        Command::GenData(a) => gen_data(a),
        Command::Diff(a) => diff(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::FAILURE
        }
    }
}
