//! Command-line front end: closed-loop simulation, Monte Carlo experiments,
//! offline detection on exported estimates, and the built-in check suites.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, unreadable or
//! invalid config), 2 on numeric or I/O failures while running.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use quadguard::config::{config_digest, ConfigDoc};
use quadguard::export::{
    read_estimates, svg_mmd, svg_mse, svg_trajectories, write_report, write_run_log, write_svg,
};
use quadguard::harness::{run_experiment, run_trial, ExperimentConfig};
use quadguard::mmd::online_detect;
use quadguard::rng::RngStream;
use quadguard::run_all_checks;

#[derive(Parser)]
#[command(
    name = "quadguard",
    version,
    about = "Attack-resilient estimation pipeline: simulate, aggregate, detect, check"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop trial and export its trajectory tables.
    Simulate(SimulateArgs),
    /// Run the Monte Carlo experiment and export aggregate tables and plots.
    Experiment(ExperimentArgs),
    /// Re-run the drift detector over a previously exported estimates.csv.
    Detect(DetectArgs),
    /// Run the built-in numerical property suites and report pass/fail.
    Check(CheckArgs),
}

/// Flags shared by the commands that build an experiment configuration.
/// Precedence: built-in defaults < --config file < individual flags.
#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file; missing keys keep their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Trial count override.
    #[arg(long, value_name = "INT")]
    trials: Option<usize>,
    /// Which estimate drives the evader's feedback loop.
    #[arg(long, value_enum, value_name = "WHICH")]
    control_estimator: Option<EstimatorChoice>,
    /// Attack magnitude override.
    #[arg(long, value_name = "FLOAT")]
    beta: Option<f64>,
    /// Attack onset step override.
    #[arg(long, value_name = "INT")]
    attack_step: Option<usize>,
    /// Disable the attack entirely.
    #[arg(long)]
    no_attack: bool,
    /// Output directory (default: $QUADGUARD_OUT, then ./out).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorChoice {
    Linear,
    Quadratic,
    Truth,
}

impl EstimatorChoice {
    fn word(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Quadratic => "quadratic",
            Self::Truth => "truth",
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    shared: ConfigArgs,
    /// Trial index within the master seed's family.
    #[arg(long, value_name = "INT", default_value_t = 0)]
    trial: usize,
    /// Skip the trajectories.svg plot.
    #[arg(long)]
    no_svg: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    shared: ConfigArgs,
}

#[derive(Args)]
struct DetectArgs {
    /// estimates.csv produced by `simulate` (or any file with its schema).
    #[arg(value_name = "ESTIMATES_CSV")]
    estimates: PathBuf,
    /// Config file supplying the detector settings.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed override (must match the simulation to reproduce its
    /// decisions).
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Trial index the estimates came from.
    #[arg(long, value_name = "INT", default_value_t = 0)]
    trial: usize,
    /// Sliding-window length override.
    #[arg(long, value_name = "INT")]
    window: Option<usize>,
    /// Directory to write detections.csv into; stdout only when omitted.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Seed for the randomized suites.
    #[arg(long, value_name = "INT", default_value_t = 2024)]
    seed: u64,
}

/// Anything that stops a command after argument parsing succeeded.
struct RunError(String);

impl<E: std::fmt::Display> From<E> for RunError {
    fn from(e: E) -> Self {
        Self(e.to_string())
    }
}

/// Usage-class failure: operator input was wrong (exit 1 instead of 2).
struct UsageError(String);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Experiment(args) => experiment(args),
        Command::Detect(args) => detect(args),
        Command::Check(args) => check(args),
    };
    match outcome {
        Ok(code) => code,
        Err(RunError(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

/// Loads the config document, layering the shared flag overrides on top.
fn load_config(args: &ConfigArgs) -> Result<ConfigDoc, UsageError> {
    let mut doc = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
            ConfigDoc::parse(&text).map_err(|e| UsageError(e.to_string()))?
        }
        None => ConfigDoc::default(),
    };
    if let Some(seed) = args.seed {
        doc.master_seed = seed;
    }
    if let Some(trials) = args.trials {
        doc.trials = trials;
    }
    if let Some(which) = args.control_estimator {
        doc.control_estimator = which.word().into();
    }
    if let Some(beta) = args.beta {
        doc.game.attack.beta = beta;
    }
    if let Some(step) = args.attack_step {
        doc.game.attack.onset = step;
    }
    if args.no_attack {
        doc.game.attack.enabled = false;
    }
    if let Some(out) = &args.out {
        doc.output_dir = Some(out.clone());
    }
    Ok(doc)
}

fn resolve(doc: &ConfigDoc) -> Result<ExperimentConfig<f64>, UsageError> {
    doc.to_config().map_err(|e| UsageError(e.to_string()))
}

/// Output directory: flag/config value, then $QUADGUARD_OUT, then ./out.
fn output_dir(doc: &ConfigDoc) -> PathBuf {
    doc.output_dir
        .clone()
        .or_else(|| std::env::var_os("QUADGUARD_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Writes the resolved config next to the data it produced.
fn echo_config(doc: &ConfigDoc, dir: &Path) -> Result<String, RunError> {
    let text = doc.to_toml();
    std::fs::create_dir_all(dir).map_err(|e| RunError(format!("{}: {e}", dir.display())))?;
    let path = dir.join("config.toml");
    std::fs::write(&path, &text).map_err(|e| RunError(format!("{}: {e}", path.display())))?;
    Ok(text)
}

fn simulate(args: SimulateArgs) -> Result<ExitCode, RunError> {
    let doc = match load_config(&args.shared) {
        Ok(doc) => doc,
        Err(UsageError(message)) => return usage(&message),
    };
    let cfg = match resolve(&doc) {
        Ok(cfg) => cfg,
        Err(UsageError(message)) => return usage(&message),
    };
    let dir = output_dir(&doc);
    let log = run_trial(&cfg, args.trial)?;
    echo_config(&doc, &dir)?;
    let written = write_run_log(&log, &dir)?;
    if !args.no_svg {
        let svg = svg_trajectories(&log, cfg.game.attack.onset, cfg.game.attack.enabled);
        write_svg(&dir.join("trajectories.svg"), &svg)?;
    }
    println!(
        "simulated trial {} (seed {}, horizon {}) -> {} files in {}",
        args.trial,
        cfg.master_seed,
        cfg.game.horizon,
        written.len() + if args.no_svg { 1 } else { 2 },
        dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn experiment(args: ExperimentArgs) -> Result<ExitCode, RunError> {
    let doc = match load_config(&args.shared) {
        Ok(doc) => doc,
        Err(UsageError(message)) => return usage(&message),
    };
    let cfg = match resolve(&doc) {
        Ok(cfg) => cfg,
        Err(UsageError(message)) => return usage(&message),
    };
    let dir = output_dir(&doc);
    let report = run_experiment(&cfg)?;
    let echoed = echo_config(&doc, &dir)?;
    let metadata = [
        ("config_digest".to_string(), config_digest(&echoed)),
        ("config_file".to_string(), "config.toml".to_string()),
    ];
    write_report(&report, &metadata, &dir)?;
    write_svg(&dir.join("mse.svg"), &svg_mse(&report))?;
    write_svg(&dir.join("mmd.svg"), &svg_mmd(&report))?;
    let decisions = report.rejection_rate.len();
    let rejecting = report
        .rejection_rate
        .iter()
        .filter(|r| **r > 0.5)
        .count();
    println!(
        "aggregated {} trials (seed {}): {} of {} decision steps reject for most trials; \
         wrote mse.csv, detection.csv, fallbacks.csv, metadata.csv, mse.svg, mmd.svg in {}",
        report.trials,
        report.master_seed,
        rejecting,
        decisions,
        dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn detect(args: DetectArgs) -> Result<ExitCode, RunError> {
    let mut doc = match &args.config {
        Some(path) => {
            let text = match std::fs::read_to_string(path) {
                Ok(text) => text,
                Err(e) => return usage(&format!("cannot read {}: {e}", path.display())),
            };
            match ConfigDoc::parse(&text) {
                Ok(doc) => doc,
                Err(e) => return usage(&e.to_string()),
            }
        }
        None => ConfigDoc::default(),
    };
    if let Some(seed) = args.seed {
        doc.master_seed = seed;
    }
    if let Some(window) = args.window {
        doc.detector.window = window;
    }
    let cfg = match resolve(&doc) {
        Ok(cfg) => cfg,
        Err(UsageError(message)) => return usage(&message),
    };

    let (linear, quad) = read_estimates::<f64>(&args.estimates)?;
    if linear.len() < 2 {
        return usage("estimates file holds fewer than two steps");
    }
    // Row 0 is the shared initial estimate; decisions run over posteriors,
    // and the detector stream matches the in-loop detector for the same
    // (seed, trial).
    let base = RngStream::from_seed(cfg.master_seed)
        .derive(args.trial as u64)
        .derive(2);
    let outcomes = online_detect(
        &linear[1..],
        &quad[1..],
        cfg.detector.window,
        &cfg.detector.bootstrap,
        &base,
    )?;

    let mut table = String::from("step,statistic,threshold,p_value,reject\n");
    for o in &outcomes {
        println!(
            "step {:>3}: statistic {:.6e} threshold {:.6e} p {:.4} {}",
            o.end_index,
            o.statistic,
            o.threshold,
            o.p_value,
            if o.reject { "REJECT" } else { "accept" }
        );
        table.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{}\n",
            o.end_index, o.statistic, o.threshold, o.p_value, o.reject
        ));
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(|e| RunError(format!("{}: {e}", dir.display())))?;
        let path = dir.join("detections.csv");
        std::fs::write(&path, table).map_err(|e| RunError(format!("{}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    let first = outcomes.iter().find(|o| o.reject).map(|o| o.end_index);
    match first {
        Some(step) => println!("first rejection at step {step}"),
        None => println!("no rejections"),
    }
    Ok(ExitCode::SUCCESS)
}

fn check(args: CheckArgs) -> Result<ExitCode, RunError> {
    let outcomes = run_all_checks(args.seed)?;
    let mut all_pass = true;
    for outcome in &outcomes {
        println!("{outcome}");
        all_pass &= outcome.pass;
    }
    if all_pass {
        println!("all {} suites passed", outcomes.len());
        Ok(ExitCode::SUCCESS)
    } else {
        let failed = outcomes.iter().filter(|o| !o.pass).count();
        println!("{failed} of {} suites FAILED", outcomes.len());
        Ok(ExitCode::from(2))
    }
}

fn usage(message: &str) -> Result<ExitCode, RunError> {
    eprintln!("error: {message}");
    Ok(ExitCode::from(1))
}
