use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gw_electric_core::harness::{OracleSection, RunPaths};
use gw_electric_core::{
    effective_resistance_laplacian, load_record, persist, random_walk_conductance, run_experiment,
    series_parallel_reduce, summarize, threads_from_env, with_threads, Error, ExperimentConfig, ExplicitNetwork, Mode,
    ModelSummary, ResultRecord,
};

mod report;
mod svg;

/// `println!` that tolerates a closed stdout, e.g. when piped into `head`.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Parser, Debug)]
#[command(name = "gw-electric", version, about = "Galton-Watson random electric networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the model constants of the configured laws.
    Constants(ConstantsArgs),
    /// Sample trees and record conductance observables per depth.
    SimulateTree(TreeArgs),
    /// Run population dynamics for the mean conductance.
    Pool(PoolArgs),
    /// Pool run with the log-correction fit and c0 estimates.
    FitExpansion(FitArgs),
    /// Pool runs of the lambda-rescaled recursion.
    Lambda(LambdaArgs),
    /// Compare the recursion with the explicit-network oracles, or solve one network.
    OracleCheck(OracleArgs),
    /// Render persisted runs as markdown, CSV and SVG.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Result directory; defaults to the config's output.dir, then `results`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConstantsArgs {
    /// Experiment configuration (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Print JSON instead of the table.
    #[arg(long)]
    json: bool,
    /// Also write `constants-<run id>.json` here.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TreeArgs {
    #[command(flatten)]
    common: Common,
    /// Depths to record; overrides `tree.depths`.
    #[arg(long, value_delimiter = ',', value_name = "N,...")]
    depths: Option<Vec<usize>>,
    /// Trees per depth; overrides `tree.trees`.
    #[arg(long)]
    trees: Option<usize>,
}

#[derive(Args, Debug)]
struct PoolOverrides {
    /// Pool size N.
    #[arg(long)]
    pool_size: Option<usize>,
    /// Independent replicates R.
    #[arg(long)]
    replicates: Option<usize>,
    /// Dynamics steps.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct PoolArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    pool: PoolOverrides,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    pool: PoolOverrides,
    /// Inclusive step range of the log-correction fit.
    #[arg(long, value_name = "LO,HI", value_parser = parse_range)]
    fit_range: Option<FitRange>,
}

#[derive(Debug, Clone, Copy)]
struct FitRange(usize, usize);

fn parse_range(s: &str) -> Result<FitRange, String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok(FitRange(parse(lo)?, parse(hi)?))
}

#[derive(Args, Debug)]
struct LambdaArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    pool: PoolOverrides,
    /// Lambdas to run; overrides `lambda.lambdas`.
    #[arg(long, value_delimiter = ',', value_name = "L,...")]
    lambdas: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["config", "network"]))]
struct OracleArgs {
    /// Experiment configuration (JSON); runs the oracle comparison.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Explicit network in the `u v r` text format.
    #[arg(long, value_name = "PATH")]
    network: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Result directory for `--config` runs.
    #[arg(long, value_name = "DIR", conflicts_with = "network")]
    out: Option<PathBuf>,
    /// Random-walk trials per walked tree or network.
    #[arg(long)]
    walk_trials: Option<u64>,
    /// Trees to compare; overrides `oracle.trees`.
    #[arg(long, conflicts_with = "network")]
    trees: Option<usize>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run ids to include, in legend order.
    #[arg(required = true, value_name = "RUN_ID")]
    runs: Vec<String>,
    /// Directory holding the persisted runs.
    #[arg(long, value_name = "DIR", default_value = "results")]
    results: PathBuf,
    /// Where the report files go; defaults to `--results`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_config() => 2,
            CliError::Core(e) if e.is_budget() => 3,
            CliError::Core(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => f.write_str(msg),
            CliError::Core(e) => {
                write!(f, "{e}")?;
                let mut source = std::error::Error::source(e);
                while let Some(s) = source {
                    write!(f, ": {s}")?;
                    source = s.source();
                }
                Ok(())
            }
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Constants(args) => constants(&args),
        Command::SimulateTree(args) => {
            let mut cfg = load_config(&args.common.config, Mode::Tree)?;
            let tree = cfg.tree.as_mut().ok_or_else(|| missing_section("tree"))?;
            if let Some(depths) = args.depths {
                tree.depths = depths;
            }
            if let Some(trees) = args.trees {
                tree.trees = trees;
            }
            execute(cfg, &args.common)
        }
        Command::Pool(args) => {
            let mut cfg = load_config(&args.common.config, Mode::Pool)?;
            apply_pool(&mut cfg, &args.pool)?;
            execute(cfg, &args.common)
        }
        Command::FitExpansion(args) => {
            let mut cfg = load_config(&args.common.config, Mode::Pool)?;
            apply_pool(&mut cfg, &args.pool)?;
            let pool = cfg.pool.as_mut().ok_or_else(|| missing_section("pool"))?;
            if let Some(FitRange(lo, hi)) = args.fit_range {
                pool.fit_range = Some([lo, hi]);
            }
            if pool.fit_range.is_none() && pool.c0_cutoffs.is_empty() {
                return Err(CliError::Config(
                    "fit-expansion needs pool.fit_range (or --fit-range) or pool.c0_cutoffs".into(),
                ));
            }
            execute(cfg, &args.common)
        }
        Command::Lambda(args) => {
            let mut cfg = load_config(&args.common.config, Mode::Lambda)?;
            let sec = cfg.lambda.as_mut().ok_or_else(|| missing_section("lambda"))?;
            let o = &args.pool;
            sec.pool_size = o.pool_size.unwrap_or(sec.pool_size);
            sec.replicates = o.replicates.unwrap_or(sec.replicates);
            sec.steps = o.steps.unwrap_or(sec.steps);
            if let Some(lambdas) = args.lambdas {
                sec.lambdas = lambdas;
            }
            execute(cfg, &args.common)
        }
        Command::OracleCheck(args) => oracle_check(args),
        Command::Report(args) => {
            let records = args
                .runs
                .iter()
                .map(|id| load_record(&args.results, id))
                .collect::<Result<Vec<_>, _>>()?;
            let out = args.out.as_deref().unwrap_or(&args.results);
            for path in report::write_report(&records, out)? {
                say!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn missing_section(name: &str) -> CliError {
    CliError::Config(format!("config has no \"{name}\" section"))
}

/// Reads a config for `mode`; the subcommand decides which section runs.
fn load_config(path: &Path, mode: Mode) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    cfg.mode = mode;
    Ok(cfg)
}

fn apply_pool(cfg: &mut ExperimentConfig, o: &PoolOverrides) -> CliResult<()> {
    let sec = cfg.pool.as_mut().ok_or_else(|| missing_section("pool"))?;
    sec.pool_size = o.pool_size.unwrap_or(sec.pool_size);
    sec.replicates = o.replicates.unwrap_or(sec.replicates);
    sec.steps = o.steps.unwrap_or(sec.steps);
    Ok(())
}

fn output_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| cfg.output.as_ref().map(|o| o.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn execute(mut cfg: ExperimentConfig, common: &Common) -> CliResult<()> {
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let dir = output_dir(&cfg, common.out.as_deref());
    let record = run_with_env_threads(&cfg)?;
    let paths = persist(&record, &dir)?;
    print_record(&record, &paths);
    Ok(())
}

fn run_with_env_threads(cfg: &ExperimentConfig) -> CliResult<ResultRecord> {
    let threads = threads_from_env()?;
    Ok(with_threads(threads, || run_experiment(cfg))??)
}

fn print_record(record: &ResultRecord, paths: &RunPaths) {
    say!("run {} ({} mode, seed {})", record.run_id, record.mode.as_str(), record.seed);
    say!("  json: {}", paths.json.display());
    say!("  csv:  {}", paths.csv.display());
    // tree runs have few depths; pool runs show the last step only
    let last = record.derived.iter().filter_map(|d| d.n).max();
    let headline: Vec<_> = match record.mode {
        Mode::Tree => record.derived.iter().collect(),
        _ => record
            .derived
            .iter()
            .filter(|d| d.n.is_none() || d.n == last || d.observable == "c0")
            .collect(),
    };
    if headline.is_empty() {
        return;
    }
    say!();
    say!("{:>6}  {:<32} {:<20} {:>22}", "n", "observable", "statistic", "value");
    for d in headline {
        let n = d.n.map_or_else(|| "-".to_string(), |n| n.to_string());
        say!("{n:>6}  {:<32} {:<20} {:>22}", d.observable, d.statistic, d.value);
    }
}

fn constants(args: &ConstantsArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let cfg = ExperimentConfig::from_json(&text).map_err(|e| match e {
        Error::Json(j) => CliError::Config(format!("{}: {j}", args.config.display())),
        other => CliError::Core(other),
    })?;
    let summary = summarize(&cfg.offspring, &cfg.resistance)?;
    let json = serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n";
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("constants-{}.json", cfg.run_id()));
        fs::write(&path, &json)?;
        eprintln!("wrote {}", path.display());
    }
    if args.json {
        say!("{}", json.trim_end());
    } else {
        say!("{}", constants_table(&summary).trim_end());
    }
    Ok(())
}

fn constants_table(s: &ModelSummary) -> String {
    let c = &s.constants;
    let flag = if s.dubuc { "< 1, E[1/W] finite" } else { ">= 1, E[1/W] infinite" };
    let mut rows: Vec<(&str, f64, &str)> = vec![
        ("m", s.m, ""),
        ("p1", s.p1, ""),
        ("p1*m", s.p1_m, flag),
        ("a1", c.a1, "E[nu(nu-1)]/m^2"),
        ("a2", c.a2, "E[nu(nu-1)(nu-2)]/m^3"),
        ("b1", c.b1, "E[xi]"),
        ("b2", c.b2, "E[xi^2]"),
        ("b3", s.b3, "E[xi^3]"),
        ("E[1/xi]", s.inv_mean, ""),
        ("E[W^2]", s.e_w2, ""),
        ("c1", c.c1, "n E[C_n] -> 1/c1"),
        ("c2", c.c2, ""),
        ("c3", c.c3, ""),
        ("c4", c.c4, ""),
        ("-c4/c1^2", c.log_slope(), "log-correction slope"),
    ];
    if let Some([r2, r3, r4]) = s.deterministic_check {
        rows.extend([
            ("c2 - 1", r2, "deterministic offspring check"),
            ("c3", r3, "deterministic offspring check"),
            ("c4 - (b1 - b2/b1)", r4, "deterministic offspring check"),
        ]);
    }
    let mut out = String::new();
    for (name, value, note) in rows {
        let _ = writeln!(out, "{name:<18} {value:>24}  {note}");
    }
    out
}

fn oracle_check(args: OracleArgs) -> CliResult<()> {
    if let Some(path) = &args.network {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let net = ExplicitNetwork::parse(&text)?;
        let seed = args.seed.unwrap_or(0);
        say!("vertices {} edges {} sinks {}", net.vertex_count(), net.edges().len(), net.sinks().len());
        let r = effective_resistance_laplacian(&net)?;
        say!("laplacian        R = {r:e}  C = {:e}", 1.0 / r);
        match series_parallel_reduce(&net) {
            Ok(sp) => say!("series-parallel  R = {sp:e}  C = {:e}", 1.0 / sp),
            Err(e @ (Error::NotATree(_) | Error::LeavesAtMixedDepth)) => say!("series-parallel  n/a ({e})"),
            Err(e) => return Err(e.into()),
        }
        if let Some(trials) = args.walk_trials {
            let w = random_walk_conductance(&net, trials, seed)?;
            say!("random walk      C = {:e} +- {:e} ({} trials)", w.conductance, w.se, w.trials);
        }
        return Ok(());
    }
    let path = args.config.as_deref().expect("clap requires --config or --network");
    let mut cfg = load_config(path, Mode::Oracle)?;
    let sec: &mut OracleSection = cfg.oracle.as_mut().ok_or_else(|| missing_section("oracle"))?;
    if let Some(t) = args.walk_trials {
        sec.walk_trials = t;
    }
    if let Some(t) = args.trees {
        sec.trees = t;
    }
    let common = Common {
        config: path.to_path_buf(),
        seed: args.seed,
        out: args.out,
    };
    execute(cfg, &common)
}
