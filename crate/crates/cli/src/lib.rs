//! Command-line front end for the schedtwin simulator.

pub mod plot;

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::{Args, Parser, Subcommand};
use log::info;

use schedtwin_core::bridge::run_stub;
use schedtwin_core::dataloader::load_workload;
use schedtwin_core::ml::DEFAULT_K;
use schedtwin_core::stats::load_accounts;
use schedtwin_core::{
    emit_outputs, generate, load_config, run, Account, BackfillMode, Bridge, ChildTransport, ClusterModel, Policy,
    RunSettings, SchedulerImpl, Seconds, SimError, SimWindow, SyntheticSpec, SystemConfig, WorkloadSet,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_PROTOCOL: i32 = 3;

pub const DEFAULT_OUTPUT_DIR: &str = "simulation_results";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn runtime(message: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_RUNTIME,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn sim_exit_code(err: &SimError) -> i32 {
    match err {
        SimError::Protocol(_) => EXIT_PROTOCOL,
        _ => EXIT_RUNTIME,
    }
}

/// Seconds, or an integer with an `s`, `m`, `h`, `d` or `w` suffix.
pub fn parse_duration(s: &str) -> Result<Seconds, String> {
    let s = s.trim();
    let (digits, unit) = match s.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => (&s[..i], c),
        _ => (s, 's'),
    };
    let scale = match unit {
        's' => 1,
        'm' => 60,
        'h' => 3600,
        'd' => 86_400,
        'w' => 604_800,
        _ => return Err(format!("unknown duration unit in `{s}`")),
    };
    let n: Seconds = digits
        .parse()
        .ok()
        .filter(|n| *n >= 0)
        .ok_or_else(|| format!("invalid duration `{s}`"))?;
    n.checked_mul(scale).ok_or_else(|| format!("duration `{s}` overflows"))
}

fn positive_duration(s: &str) -> Result<Seconds, String> {
    match parse_duration(s)? {
        0 => Err("duration must be > 0".into()),
        d => Ok(d),
    }
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse()
}

fn parse_backfill(s: &str) -> Result<BackfillMode, String> {
    s.parse()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SchedulerChoice {
    Default,
    /// Shell command of an external scheduler speaking the bridge protocol.
    Bridge(String),
}

impl fmt::Display for SchedulerChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedulerChoice::Default => f.write_str("default"),
            SchedulerChoice::Bridge(cmd) => write!(f, "bridge:{cmd}"),
        }
    }
}

fn parse_scheduler(s: &str) -> Result<SchedulerChoice, String> {
    match s {
        "default" => Ok(SchedulerChoice::Default),
        _ => match s.strip_prefix("bridge:") {
            Some(cmd) if !cmd.trim().is_empty() => Ok(SchedulerChoice::Bridge(cmd.to_string())),
            _ => Err(format!(
                "unknown scheduler `{s}` (expected `default` or `bridge:<command>`)"
            )),
        },
    }
}

/// Flags of one simulation run.
#[derive(Args, Clone, Debug, PartialEq)]
pub struct RunArgs {
    /// Workload files (canonical CSV, or SWF by `.swf` extension). Without
    /// any, a synthetic workload is generated from --seed.
    #[arg(short = 'f', long = "workload", num_args = 1.., value_name = "PATH")]
    pub workloads: Vec<PathBuf>,
    /// System config file of `key = value` lines.
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Start this long after the dataset start (also `-ff`).
    #[arg(long = "fast-forward", value_parser = parse_duration, default_value = "0", value_name = "DUR")]
    pub fast_forward: Seconds,
    /// Simulated duration; defaults to the rest of the dataset.
    #[arg(short = 't', long = "time", value_parser = positive_duration, value_name = "DUR")]
    pub duration: Option<Seconds>,
    #[arg(long, value_parser = parse_policy, default_value = "replay")]
    pub policy: Policy,
    #[arg(long, value_parser = parse_backfill, default_value = "none")]
    pub backfill: BackfillMode,
    /// `default`, or `bridge:<command>` for an external scheduler.
    #[arg(long, value_parser = parse_scheduler, default_value = "default")]
    pub scheduler: SchedulerChoice,
    /// Accumulate per-account statistics and write accounts.json.
    #[arg(long)]
    pub accounts: bool,
    /// Accounts from an earlier run, used by the acct_* policies.
    #[arg(long = "accounts-json", value_name = "PATH")]
    pub accounts_json: Option<PathBuf>,
    /// Trained model for the ml policy.
    #[arg(long = "ml-model", value_name = "PATH")]
    pub ml_model: Option<PathBuf>,
    /// Write output files, by default into simulation_results/.
    #[arg(short = 'o', long = "output", num_args = 0..=1, default_missing_value = DEFAULT_OUTPUT_DIR, value_name = "DIR")]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of jobs in the synthetic workload.
    #[arg(long = "synthetic-jobs", default_value_t = 200)]
    pub synthetic_jobs: usize,
}

/// A validated run request.
pub type RunSpec = RunArgs;

impl RunArgs {
    /// Flags that parse back to an equal spec.
    pub fn to_argv(&self) -> Vec<String> {
        let mut argv: Vec<String> = Vec::new();
        let mut push = |a: &str, v: String| {
            argv.push(a.to_string());
            argv.push(v);
        };
        if let Some(s) = &self.system {
            push("--system", s.display().to_string());
        }
        push("-ff", self.fast_forward.to_string());
        if let Some(t) = self.duration {
            push("-t", t.to_string());
        }
        push("--policy", self.policy.to_string());
        push("--backfill", self.backfill.to_string());
        push("--scheduler", self.scheduler.to_string());
        if let Some(p) = &self.accounts_json {
            push("--accounts-json", p.display().to_string());
        }
        if let Some(p) = &self.ml_model {
            push("--ml-model", p.display().to_string());
        }
        if let Some(o) = &self.output {
            push("-o", o.display().to_string());
        }
        push("--seed", self.seed.to_string());
        push("--synthetic-jobs", self.synthetic_jobs.to_string());
        if self.accounts {
            argv.push("--accounts".into());
        }
        if !self.workloads.is_empty() {
            argv.push("-f".into());
            argv.extend(self.workloads.iter().map(|w| w.display().to_string()));
        }
        argv
    }
}

#[derive(Args, Clone, Debug, PartialEq)]
pub struct PlotArgs {
    /// Run output directories; each becomes one line per panel.
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    #[arg(short = 'o', long = "output", default_value = "timeseries.svg")]
    pub output: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq)]
pub struct TrainArgs {
    /// Training workloads; synthetic from --seed when absent.
    #[arg(short = 'f', long = "workload", num_args = 1.., value_name = "PATH")]
    pub workloads: Vec<PathBuf>,
    #[arg(long)]
    pub system: Option<PathBuf>,
    #[arg(short = 'k', long, default_value_t = DEFAULT_K)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "synthetic-jobs", default_value_t = 200)]
    pub synthetic_jobs: usize,
    #[arg(short = 'o', long = "output", default_value = "model.json")]
    pub output: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq)]
pub struct SweepArgs {
    /// Comma-separated policies.
    #[arg(long, value_delimiter = ',', value_parser = parse_policy, required = true)]
    pub policies: Vec<Policy>,
    /// Comma-separated backfill modes.
    #[arg(long, value_delimiter = ',', value_parser = parse_backfill, default_value = "none")]
    pub backfills: Vec<BackfillMode>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Clone, Debug, PartialEq)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub jobs: usize,
    #[arg(long = "total-nodes", default_value_t = 64)]
    pub total_nodes: usize,
    #[arg(long = "max-nodes", default_value_t = 32)]
    pub max_nodes: usize,
    #[arg(long = "mean-interarrival", default_value_t = 120.0)]
    pub mean_interarrival: f64,
    /// Number of jobs that all arrive at time zero.
    #[arg(long = "initial-backlog", default_value_t = 0)]
    pub initial_backlog: usize,
    #[arg(long = "min-runtime", default_value_t = 300)]
    pub min_runtime: Seconds,
    #[arg(long = "max-runtime", default_value_t = 7200)]
    pub max_runtime: Seconds,
    #[arg(long = "trace-fraction", default_value_t = 0.25)]
    pub trace_fraction: f64,
    #[arg(short = 'o', long = "output", required = true)]
    pub output: PathBuf,
}

#[derive(Subcommand, Clone, Debug, PartialEq)]
pub enum Command {
    /// Run one simulation (the default when no subcommand is given).
    Run(RunArgs),
    /// Plot utilization and power of one or more runs as SVG.
    Plot(PlotArgs),
    /// Train the clustering model used by the ml policy.
    TrainMl(TrainArgs),
    /// Serve the reference FCFS scheduler over stdin/stdout.
    StubScheduler,
    /// Run policy/backfill combinations in parallel processes.
    Sweep(SweepArgs),
    /// Write a synthetic workload as canonical CSV.
    Generate(GenerateArgs),
}

#[derive(Parser, Clone, Debug, PartialEq)]
#[command(
    name = "schedtwin",
    version,
    about = "Scheduling-integrated data-center digital twin"
)]
#[command(args_conflicts_with_subcommands = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    #[command(flatten)]
    pub run: RunArgs,
}

/// Rewrite the multi-letter short flag `-ff` into its long form.
pub fn preprocess(args: impl IntoIterator<Item = String>) -> Vec<String> {
    args.into_iter()
        .map(|a| {
            if a == "-ff" {
                "--fast-forward".to_string()
            } else if let Some(v) = a.strip_prefix("-ff=") {
                format!("--fast-forward={v}")
            } else {
                a
            }
        })
        .collect()
}

/// Parse a full argv (program name first).
pub fn parse_cli(args: impl IntoIterator<Item = String>) -> Result<Cli, clap::Error> {
    Cli::try_parse_from(preprocess(args))
}

/// Parse run flags alone, without the program name.
pub fn parse_run_spec(flags: &[String]) -> Result<RunSpec, clap::Error> {
    let argv = std::iter::once("schedtwin".to_string()).chain(flags.iter().cloned());
    match parse_cli(argv)? {
        Cli { command: None, run }
        | Cli {
            command: Some(Command::Run(run)),
            ..
        } => Ok(run),
        _ => unreachable!("flags never select a subcommand"),
    }
}

fn load_system(path: Option<&Path>) -> Result<SystemConfig, CliError> {
    match path {
        Some(p) => load_config(p).map_err(|e| CliError::runtime(format!("{}: {e}", p.display()))),
        None => Ok(SystemConfig::default()),
    }
}

fn load_workloads(
    paths: &[PathBuf],
    config: &SystemConfig,
    seed: u64,
    synthetic_jobs: usize,
) -> Result<WorkloadSet, CliError> {
    if paths.is_empty() {
        info!("no workload given; generating {synthetic_jobs} synthetic jobs from seed {seed}");
        return Ok(generate(&SyntheticSpec {
            jobs: synthetic_jobs,
            total_nodes: config.total_nodes,
            max_nodes: 32.min(config.total_nodes),
            seed,
            ..SyntheticSpec::default()
        }));
    }
    let sets = paths
        .iter()
        .map(|p| load_workload(p).map_err(CliError::runtime))
        .collect::<Result<Vec<_>, _>>()?;
    WorkloadSet::merge(sets).map_err(CliError::runtime)
}

/// The window a spec selects within a dataset.
pub fn window_for(spec: &RunSpec, span: SimWindow) -> SimWindow {
    let start = span.start + spec.fast_forward;
    let end = match spec.duration {
        Some(d) => start + d,
        None => span.end.max(start),
    };
    SimWindow { start, end }
}

/// Run one simulation and write its outputs. Returns the stats text.
pub fn execute_run(spec: &RunSpec) -> Result<String, CliError> {
    let config = load_system(spec.system.as_deref())?;
    let workload = load_workloads(&spec.workloads, &config, spec.seed, spec.synthetic_jobs)?;
    let window = window_for(spec, workload.dataset_span);

    let mut settings = RunSettings::new(spec.policy, spec.backfill);
    settings.accumulate_accounts = spec.accounts;
    if let Some(path) = &spec.accounts_json {
        let accounts: BTreeMap<String, Account> =
            load_accounts(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        settings.accounts = Some(accounts);
    }
    if let Some(path) = &spec.ml_model {
        settings.ml_model =
            Some(ClusterModel::load(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?);
    }
    let scheduler = match &spec.scheduler {
        SchedulerChoice::Default => SchedulerImpl::Builtin,
        SchedulerChoice::Bridge(cmd) => {
            let transport = ChildTransport::spawn(cmd).map_err(|e| CliError {
                code: EXIT_PROTOCOL,
                message: e.to_string(),
            })?;
            SchedulerImpl::External(Box::new(Bridge::new(transport)))
        }
    };

    let (output, failure) = match run(config, &workload, window, settings, scheduler) {
        Ok(out) => (Some(out), None),
        Err(f) => (f.partial.map(|b| *b), Some(f.error)),
    };
    if let (Some(out), Some(dir)) = (&output, &spec.output) {
        emit_outputs(out, dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
    }
    match failure {
        Some(err) => Err(CliError {
            code: sim_exit_code(&err),
            message: err.to_string(),
        }),
        None => Ok(output.unwrap().report.render()),
    }
}

pub fn execute_train(args: &TrainArgs) -> Result<(), CliError> {
    let config = load_system(args.system.as_deref())?;
    let workload = load_workloads(&args.workloads, &config, args.seed, args.synthetic_jobs)?;
    let mut model =
        ClusterModel::train(&workload.jobs, &config, args.clusters, args.seed).map_err(CliError::runtime)?;
    if !config.ml_alpha.is_empty() {
        model.weights = model
            .weights
            .with_overrides(&config.ml_alpha)
            .map_err(CliError::runtime)?;
    }
    model.save(&args.output).map_err(CliError::runtime)
}

pub fn execute_generate(args: &GenerateArgs) -> Result<(), CliError> {
    if args.max_nodes == 0
        || args.max_nodes > args.total_nodes
        || args.min_runtime < 1
        || args.min_runtime > args.max_runtime
    {
        return Err(CliError {
            code: EXIT_USAGE,
            message: "need 1 <= max-nodes <= total-nodes and 1 <= min-runtime <= max-runtime".into(),
        });
    }
    let w = generate(&SyntheticSpec {
        jobs: args.jobs,
        total_nodes: args.total_nodes,
        max_nodes: args.max_nodes,
        mean_interarrival: args.mean_interarrival,
        initial_backlog: args.initial_backlog,
        min_runtime: args.min_runtime,
        max_runtime: args.max_runtime,
        trace_fraction: args.trace_fraction,
        seed: args.seed,
        ..SyntheticSpec::default()
    });
    schedtwin_core::dataloader::save_canonical(&w, &args.output).map_err(CliError::runtime)
}

/// Run each combination as a child process of `exe` with its own output
/// directory `<out>/<policy>_<backfill>`.
pub fn execute_sweep(exe: &Path, args: &SweepArgs) -> Result<Vec<PathBuf>, CliError> {
    let root = args
        .run
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    let mut children = Vec::new();
    for &policy in &args.policies {
        for &backfill in &args.backfills {
            let dir = root.join(format!("{policy}_{backfill}"));
            let spec = RunSpec {
                policy,
                backfill,
                output: Some(dir.clone()),
                ..args.run.clone()
            };
            let child = Process::new(exe)
                .args(spec.to_argv())
                .stdout(std::process::Stdio::null())
                .spawn()
                .map_err(CliError::runtime)?;
            children.push((dir, child));
        }
    }
    let mut dirs = Vec::new();
    let mut worst = EXIT_OK;
    for (dir, mut child) in children {
        let status = child.wait().map_err(CliError::runtime)?;
        let code = status.code().unwrap_or(EXIT_RUNTIME);
        if code != EXIT_OK {
            eprintln!("{}: exit code {code}", dir.display());
            worst = worst.max(code);
        }
        dirs.push(dir);
    }
    if worst != EXIT_OK {
        return Err(CliError {
            code: worst,
            message: "one or more sweep runs failed".into(),
        });
    }
    Ok(dirs)
}

/// Entry point shared by the binary and the tests. Returns the exit code.
pub fn main_with(args: Vec<String>, exe: &Path) -> i32 {
    let cli = match parse_cli(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        None => execute_run(&cli.run).map(|stats| print!("{stats}")),
        Some(Command::Run(spec)) => execute_run(&spec).map(|stats| print!("{stats}")),
        Some(Command::Plot(args)) => plot::plot_dirs(&args.dirs, &args.output)
            .map_err(CliError::runtime)
            .map(|_| println!("wrote {}", args.output.display())),
        Some(Command::TrainMl(args)) => execute_train(&args).map(|_| println!("wrote {}", args.output.display())),
        Some(Command::StubScheduler) => {
            let stdin = io::stdin();
            run_stub(stdin.lock(), io::stdout().lock()).map_err(|e| CliError {
                code: EXIT_PROTOCOL,
                message: e.to_string(),
            })
        }
        Some(Command::Sweep(args)) => execute_sweep(exe, &args).map(|dirs| {
            for d in dirs {
                println!("{}", d.display());
            }
        }),
        Some(Command::Generate(args)) => execute_generate(&args).map(|_| println!("wrote {}", args.output.display())),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn durations() {
        assert_eq!(parse_duration("61000"), Ok(61000));
        assert_eq!(parse_duration("1h"), Ok(3600));
        assert_eq!(parse_duration("15d"), Ok(15 * 86_400));
        assert_eq!(parse_duration("2m"), Ok(120));
        assert!(parse_duration("1y").is_err());
        assert!(parse_duration("-5").is_err());
        assert!(parse_duration("h").is_err());
        assert!(positive_duration("0").is_err());
    }

    #[test]
    fn artifact_style_flags() {
        let spec = parse_run_spec(&flags("-ff 4381000 -t 61000 --policy fcfs --backfill easy")).unwrap();
        assert_eq!(spec.fast_forward, 4381000);
        assert_eq!(spec.duration, Some(61000));
        assert_eq!(spec.policy, Policy::Fcfs);
        assert_eq!(spec.backfill, BackfillMode::Easy);
        let w = window_for(&spec, SimWindow { start: 0, end: 10 });
        assert_eq!((w.start, w.end), (4381000, 4442000));
    }

    #[test]
    fn output_flag_default_dir() {
        let spec = parse_run_spec(&flags("-o")).unwrap();
        assert_eq!(spec.output, Some(PathBuf::from(DEFAULT_OUTPUT_DIR)));
        let spec = parse_run_spec(&flags("-o out --seed 3")).unwrap();
        assert_eq!(spec.output, Some(PathBuf::from("out")));
        assert_eq!(parse_run_spec(&[]).unwrap().output, None);
    }

    #[test]
    fn bad_flags_are_usage_errors() {
        assert!(parse_run_spec(&flags("--policy bogus")).is_err());
        assert!(parse_run_spec(&flags("--backfill sometimes")).is_err());
        assert!(parse_run_spec(&flags("-t 1y")).is_err());
        assert!(parse_run_spec(&flags("--frobnicate")).is_err());
        assert!(parse_run_spec(&flags("--scheduler slurm")).is_err());
        assert_eq!(
            main_with(flags("schedtwin --policy bogus"), Path::new("schedtwin")),
            EXIT_USAGE
        );
    }

    #[test]
    fn firstfit_alias_and_bridge_scheduler() {
        let spec = parse_run_spec(&flags("--backfill firstfit --scheduler bridge:./sched")).unwrap();
        assert_eq!(spec.backfill, BackfillMode::FirstFit);
        assert_eq!(spec.scheduler, SchedulerChoice::Bridge("./sched".into()));
    }

    #[test]
    fn subcommands_parse() {
        let cli = parse_cli(flags("schedtwin plot a b -o x.svg")).unwrap();
        assert!(matches!(cli.command, Some(Command::Plot(PlotArgs { ref dirs, .. })) if dirs.len() == 2));
        let cli = parse_cli(flags("schedtwin sweep --policies fcfs,sjf --backfills none,easy -t 1h")).unwrap();
        match cli.command {
            Some(Command::Sweep(s)) => {
                assert_eq!(s.policies, vec![Policy::Fcfs, Policy::Sjf]);
                assert_eq!(s.run.duration, Some(3600));
            }
            other => panic!("{other:?}"),
        }
    }
}
