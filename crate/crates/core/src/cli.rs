//! `pipefuse` command line.
//!
//! Exit codes: 0 success, 2 bad configuration or input, 3 runtime failure.
//! Errors go to stderr as `error[config]: ...` or `error[runtime]: ...`.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::consensus::{
    read_edge_list, run_consensus, write_mse_csv, ConsensusError, ConsensusState,
};
use crate::ekf::{run_filter, write_estimates_csv, FilterState, ProcessModel};
use crate::fusvaf::{fusvaf_stream, write_stream_csv};
use crate::sim::config::{FusvafSpec, PredictorKind, ScenarioConfig};
use crate::sim::metrics::RunMetrics;
use crate::sim::output::summary;
use crate::sim::{run_simulation, write_outputs, SimError};
use crate::trace::{load_trace, SensorKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "pipefuse",
    version,
    about = "Multi-level sensor fusion for pipeline monitoring"
)]
pub struct Cli {
    /// Suppress progress and summary output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write its CSVs and summary.
    Run(RunArgs),
    /// Run a scenario once per parameter value.
    Sweep(SweepArgs),
    /// Filter a scalar `timestamp,value` trace.
    Ekf(EkfArgs),
    /// Validate and fuse same-kind traces.
    Fusvaf(FusvafArgs),
    /// Average consensus over an edge-list graph.
    Consensus(ConsensusArgs),
    /// Check a scenario without running it.
    Validate(ScenarioArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario TOML.
    #[arg(long)]
    pub config: PathBuf,
    /// Replaces the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `dotted.key=value`, applied in order; array elements by index.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ScenarioArgs {
    fn all_overrides(&self) -> Vec<String> {
        let mut all = self.overrides.clone();
        if let Some(seed) = self.seed {
            all.push(format!("seed={seed}"));
        }
        all
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value = "sweep")]
    pub out: PathBuf,
    /// `dotted.key=v1,v2,...`; several flags sweep the cartesian product.
    #[arg(long, value_name = "KEY=V1,V2", required = true)]
    pub param: Vec<String>,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EkfArgs {
    /// `timestamp,value` CSV.
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, default_value = "temperature")]
    pub kind: SensorKind,
    /// Process noise of the random-walk model.
    #[arg(long, default_value_t = 0.1)]
    pub q: f64,
    /// Measurement noise.
    #[arg(long, default_value_t = 0.1)]
    pub r: f64,
    /// Initial estimate; defaults to the first reading.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub p0: f64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictorArg {
    Ekf,
    ConstantVelocity,
    Smoothing,
}

#[derive(Debug, Args)]
pub struct FusvafArgs {
    /// One `timestamp,value` CSV per node; repeat the flag.
    #[arg(long = "trace", required = true)]
    pub traces: Vec<PathBuf>,
    #[arg(long, default_value = "temperature")]
    pub kind: SensorKind,
    #[arg(long, value_enum, default_value = "ekf")]
    pub predictor: PredictorArg,
    #[arg(long, default_value_t = 0.1)]
    pub q: f64,
    #[arg(long, default_value_t = 0.1)]
    pub r: f64,
    #[arg(long, default_value_t = 1.0)]
    pub omega: f64,
    #[arg(long, default_value_t = 3.0)]
    pub k_sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub w_min: f64,
    #[arg(long, default_value_t = 100.0)]
    pub w_max: f64,
    /// Residual window and warm-up length, ticks.
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    #[arg(long, default_value_t = 10.0)]
    pub initial_half_width: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConsensusArgs {
    /// `source,target` edge list, zero-based agent indices.
    #[arg(long)]
    pub graph: PathBuf,
    /// Initial estimates, comma separated, one per agent.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Runtime(_) => "runtime",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.message());
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(a) => cmd_run(a, cli.quiet),
        Command::Sweep(a) => cmd_sweep(a, cli.quiet),
        Command::Ekf(a) => cmd_ekf(a, cli.quiet),
        Command::Fusvaf(a) => cmd_fusvaf(a, cli.quiet),
        Command::Consensus(a) => cmd_consensus(a, cli.quiet),
        Command::Validate(a) => cmd_validate(a, cli.quiet),
    }
}

fn load_scenario(args: &ScenarioArgs, extra: &[String]) -> Result<ScenarioConfig, CliError> {
    let mut overrides = args.all_overrides();
    overrides.extend_from_slice(extra);
    ScenarioConfig::load(&args.config, &overrides).map_err(config_err)
}

pub fn cmd_run(args: &RunArgs, quiet: bool) -> Result<(), CliError> {
    let config = load_scenario(&args.scenario, &[])?;
    let run = run_simulation(&config)?;
    let files = write_outputs(&run, &args.out)?;
    if !quiet {
        print!("{}", summary(&run, &files));
    }
    Ok(())
}

pub fn cmd_validate(args: &ScenarioArgs, quiet: bool) -> Result<(), CliError> {
    let config = load_scenario(args, &[])?;
    if !quiet {
        println!(
            "ok: {} nodes in {} clusters, {} events, {} ticks",
            config.topology.nodes.len(),
            config.topology.clusters.len(),
            config.events.len(),
            config.horizon
        );
    }
    Ok(())
}

/// Splits `key=v1,v2` into the key and its values.
fn parse_param(raw: &str) -> Result<(String, Vec<String>), CliError> {
    let (key, values) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("bad --param `{raw}`: expected key=v1,v2")))?;
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_owned())
        .filter(|v| !v.is_empty())
        .collect();
    if key.trim().is_empty() || values.is_empty() {
        return Err(CliError::Config(format!(
            "bad --param `{raw}`: expected key=v1,v2"
        )));
    }
    Ok((key.trim().to_owned(), values))
}

/// Every combination of parameter values, first parameter varying slowest.
fn cartesian(params: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut combos = vec![Vec::new()];
    for (key, values) in params {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c: Vec<(String, String)> = prefix.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    combos
}

fn dir_name(combo: &[(String, String)]) -> String {
    combo
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("_")
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._=-".contains(c) {
                c
            } else {
                '-'
            }
        })
        .collect()
}

pub fn cmd_sweep(args: &SweepArgs, quiet: bool) -> Result<(), CliError> {
    let params = args
        .param
        .iter()
        .map(|p| parse_param(p))
        .collect::<Result<Vec<_>, _>>()?;
    let combos = cartesian(&params);

    // Reject bad keys or values before anything runs.
    let configs = combos
        .iter()
        .map(|combo| {
            let extra: Vec<String> = combo.iter().map(|(k, v)| format!("{k}={v}")).collect();
            load_scenario(&args.scenario, &extra)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunMetrics, CliError>>>> =
        Mutex::new((0..configs.len()).map(|_| None).collect());
    let jobs = args.jobs.clamp(1, configs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(config) = configs.get(i) else { break };
                let dir = args.out.join(dir_name(&combos[i]));
                let outcome = run_simulation(config)
                    .map_err(CliError::from)
                    .and_then(|run| {
                        write_outputs(&run, &dir)?;
                        Ok(run.metrics)
                    });
                if !quiet {
                    let status = if outcome.is_ok() { "done" } else { "failed" };
                    eprintln!("[{}/{}] {} {status}", i + 1, configs.len(), dir.display());
                }
                results.lock().expect("no panics while locked")[i] = Some(outcome);
            });
        }
    });

    let results = results.into_inner().expect("no panics while locked");
    let mut header: Vec<String> = vec!["run".into()];
    header.extend(params.iter().map(|(k, _)| k.clone()));
    header.extend(RunMetrics::csv_header());
    let path = args.out.join("sweep.csv");
    fs::create_dir_all(&args.out).map_err(runtime_err)?;
    let mut w = csv::Writer::from_path(&path).map_err(runtime_err)?;
    w.write_record(&header).map_err(runtime_err)?;
    let mut first_err = None;
    for (combo, result) in combos.iter().zip(results) {
        match result.expect("every run reports") {
            Ok(metrics) => {
                let mut row = vec![dir_name(combo)];
                row.extend(combo.iter().map(|(_, v)| v.clone()));
                row.extend(metrics.csv_row());
                w.write_record(&row).map_err(runtime_err)?;
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    w.flush().map_err(runtime_err)?;
    if let Some(e) = first_err {
        return Err(e);
    }
    if !quiet {
        println!("{} runs, summary in {}", combos.len(), path.display());
    }
    Ok(())
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(runtime_err)?;
            }
            Ok(Box::new(File::create(path).map_err(runtime_err)?))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn read_trace_file(path: &Path, kind: SensorKind) -> Result<crate::trace::Trace, CliError> {
    let node = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".into());
    load_trace(path, node, kind).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn cmd_ekf(args: &EkfArgs, quiet: bool) -> Result<(), CliError> {
    let trace = read_trace_file(&args.trace, args.kind)?;
    let model = ProcessModel::random_walk(args.q, args.r).map_err(config_err)?;
    let x0 = args.x0.unwrap_or(trace.readings()[0].value);
    let init = FilterState::scalar(x0, args.p0).map_err(config_err)?;
    let steps = run_filter(&model, &init, &trace).map_err(runtime_err)?;
    write_estimates_csv(&steps, sink(&args.out)?).map_err(runtime_err)?;
    if !quiet && args.out.is_some() {
        eprintln!("{} estimates", steps.len());
    }
    Ok(())
}

pub fn cmd_fusvaf(args: &FusvafArgs, quiet: bool) -> Result<(), CliError> {
    let traces = args
        .traces
        .iter()
        .map(|p| read_trace_file(p, args.kind))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = FusvafSpec {
        omega: args.omega,
        k_sigma: args.k_sigma,
        w_min: args.w_min,
        w_max: args.w_max,
        gate_window: args.window,
        initial_half_width: args.initial_half_width,
        predictor: match args.predictor {
            PredictorArg::Ekf => PredictorKind::Ekf,
            PredictorArg::ConstantVelocity => PredictorKind::ConstantVelocity,
            PredictorArg::Smoothing => PredictorKind::Smoothing,
        },
        predictor_q: args.q,
        predictor_r: args.r,
        ..FusvafSpec::default()
    };
    let config = spec.to_config().map_err(config_err)?;
    let predictor = spec.predictor().map_err(config_err)?;
    let steps = fusvaf_stream(&traces, config, predictor).map_err(runtime_err)?;
    write_stream_csv(&steps, traces.len(), sink(&args.out)?).map_err(runtime_err)?;
    if !quiet && args.out.is_some() {
        let rejected = steps
            .iter()
            .flat_map(|s| s.inputs.iter().flatten())
            .filter(|(_, sigma)| *sigma == 0.0)
            .count();
        eprintln!("{} fused ticks, {rejected} readings rejected", steps.len());
    }
    Ok(())
}

pub fn cmd_consensus(args: &ConsensusArgs, quiet: bool) -> Result<(), CliError> {
    let file = File::open(&args.graph)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.graph.display())))?;
    let graph = read_edge_list(file, args.values.len())
        .map_err(|e| CliError::Config(format!("{}: {e}", args.graph.display())))?;
    let state = ConsensusState::new(args.values.clone()).map_err(config_err)?;
    let outcome = run_consensus(&state, &graph, args.tol, args.max_iter).map_err(|e| match e {
        ConsensusError::Dimension { .. }
        | ConsensusError::InvalidTolerance(_)
        | ConsensusError::InvalidMaxIter
        | ConsensusError::Disconnected => config_err(e),
        other => runtime_err(other),
    })?;
    write_mse_csv(&outcome.mse_history, sink(&args.out)?).map_err(runtime_err)?;
    if !quiet && args.out.is_some() {
        let finals: Vec<String> = outcome.estimates.iter().map(|v| v.to_string()).collect();
        eprintln!(
            "{} after {} iterations{}: {}",
            if outcome.converged {
                "converged"
            } else {
                "stopped"
            },
            outcome.iterations,
            if outcome.converged {
                ""
            } else {
                " (max_iter reached)"
            },
            finals.join(",")
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_split_and_combine() {
        let (k, v) = parse_param("energy.ops_per_bit=1000, 2000,3000").unwrap();
        assert_eq!(k, "energy.ops_per_bit");
        assert_eq!(v, ["1000", "2000", "3000"]);
        assert!(parse_param("novalues=").is_err());
        assert!(parse_param("noequals").is_err());

        let combos = cartesian(&[
            ("a".into(), vec!["1".into(), "2".into()]),
            ("b".into(), vec!["x".into(), "y".into(), "z".into()]),
        ]);
        assert_eq!(combos.len(), 6);
        assert_eq!(dir_name(&combos[0]), "a=1_b=x");
        assert_eq!(dir_name(&combos[5]), "a=2_b=z");
        assert_eq!(dir_name(&[("s".into(), "\"a/b\"".into())]), "s=-a-b-");
    }

    #[test]
    fn seed_flag_becomes_an_override() {
        let args = ScenarioArgs {
            config: PathBuf::from("x.toml"),
            seed: Some(9),
            overrides: vec!["horizon=10".into()],
        };
        assert_eq!(args.all_overrides(), ["horizon=10", "seed=9"]);
    }

    #[test]
    fn parser_accepts_every_subcommand() {
        for argv in [
            vec![
                "pipefuse",
                "run",
                "--config",
                "a.toml",
                "--seed",
                "3",
                "--override",
                "x=1",
            ],
            vec![
                "pipefuse", "sweep", "--config", "a.toml", "--param", "seed=1,2", "--jobs", "2",
            ],
            vec!["pipefuse", "ekf", "--trace", "t.csv", "--x0", "-1.5"],
            vec![
                "pipefuse",
                "fusvaf",
                "--trace",
                "a.csv",
                "--trace",
                "b.csv",
                "--predictor",
                "constant-velocity",
            ],
            vec![
                "pipefuse",
                "consensus",
                "--graph",
                "g.csv",
                "--values",
                "1,-2,3",
            ],
            vec!["pipefuse", "--quiet", "validate", "--config", "a.toml"],
        ] {
            Cli::try_parse_from(&argv).unwrap_or_else(|e| panic!("{argv:?}: {e}"));
        }
        assert!(Cli::try_parse_from(["pipefuse", "sweep", "--config", "a.toml"]).is_err());
    }
}
