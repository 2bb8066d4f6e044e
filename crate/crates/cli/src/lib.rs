//! Command-line driver: `train`, `eval`, `oracle` and `verify`.

pub mod commands;
pub mod config;
pub mod error;
pub mod verify;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stopbed::env::lingauss::LinGaussConfig;
use stopbed::exec::{init_threads, Execution};
use stopbed::mdp::{CostFn, Formulation};
use stopbed::train::Curriculum;

use crate::config::{EnvConfig, RunConfig};
use crate::error::{CliError, CliResult};

pub const THREADS_VAR: &str = "STOPBED_THREADS";

#[derive(Debug, Parser)]
#[command(name = "stopbed", version = config::VERSION, about = "Sequential experimental design with learned stopping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy and critic; writes CSVs, checkpoints and a manifest.
    Train(TrainArgs),
    /// Evaluate the final networks of a training run.
    Eval(EvalArgs),
    /// Print the closed-form linear-Gaussian utility table.
    Oracle(OracleArgs),
    /// Run the property suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EnvKind {
    Lingauss,
    Convdiff,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Curriculum,
    Vanilla,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormulationArg {
    Terminal,
    Incremental,
}

/// Flags override values from `--config`.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Config file or a previous run's manifest.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub env: Option<EnvKind>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Constant per-experiment cost.
    #[arg(long, allow_negative_numbers = true)]
    pub cost: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long, value_enum)]
    pub formulation: Option<FormulationArg>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub field_cache: Option<PathBuf>,
    #[arg(long)]
    pub verbosity: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Defaults to `<run>/eval`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Episodes written to `traces.csv`.
    #[arg(long, default_value_t = 20)]
    pub traces: usize,
    #[arg(long)]
    pub field_cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Linear-Gaussian settings from a config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub horizon: usize,
    /// Constant cost; repeat for several tables.
    #[arg(long, allow_negative_numbers = true)]
    pub cost: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// gradcheck, equivalence, fv or oracle; repeatable. Default: all.
    #[arg(long)]
    pub suite: Vec<String>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub field_cache: Option<PathBuf>,
}

/// Execution mode from `STOPBED_THREADS`: `1` runs sequentially, larger
/// values cap the worker pool.
pub fn execution_from_env() -> CliResult<Execution> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(Execution::Parallel),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(1) => Ok(Execution::Sequential),
            Ok(n) if n > 1 => {
                init_threads(n);
                Ok(Execution::Parallel)
            }
            _ => Err(CliError::Validation(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
    }
}

/// Resolves a train invocation into a full config.
pub fn resolve_train(args: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(kind) = args.env {
        let name = match kind {
            EnvKind::Lingauss => "lingauss",
            EnvKind::Convdiff => "convdiff",
        };
        if cfg.env.name() != name {
            cfg.env = EnvConfig::default_for(name)?;
        }
    }
    if let Some(n) = args.horizon {
        cfg.env.set_horizon(n);
    }
    if let Some(c) = args.cost {
        cfg.env.set_cost(CostFn::Constant { value: c });
    }
    match args.mode {
        Some(Mode::Vanilla) => cfg.train.curriculum = Curriculum::Vanilla,
        Some(Mode::Curriculum) if cfg.train.curriculum.is_vanilla() => {
            cfg.train.curriculum = Curriculum::default()
        }
        _ => {}
    }
    match args.formulation {
        Some(FormulationArg::Terminal) => cfg.train.formulation = Formulation::Terminal,
        Some(FormulationArg::Incremental) => cfg.train.formulation = Formulation::Incremental,
        None => {}
    }
    if let Some(l) = args.iters {
        cfg.train.iterations = l;
    }
    if let Some(m) = args.episodes {
        cfg.train.episodes_per_iter = m;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(p) = &args.field_cache {
        cfg.field_cache = Some(p.clone());
    }
    if let Some(v) = &args.verbosity {
        cfg.verbosity = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_logging(level: log::LevelFilter) {
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    let io = |e: std::io::Error| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    };
    match cli.command {
        Command::Train(args) => {
            let cfg = resolve_train(&args)?;
            init_logging(cfg.log_level()?);
            let exec = execution_from_env()?;
            let run = commands::train_run(&cfg, exec)?;
            let last = run.record.rows.last().expect("at least one iteration");
            writeln!(
                out,
                "trained {} iterations: final reward {:.4}, stop stage {:.3}; outputs in {}",
                run.record.rows.len(),
                last.avg_reward,
                last.avg_stop_stage,
                cfg.out.display()
            )
            .map_err(io)?;
        }
        Command::Eval(args) => {
            init_logging(log::LevelFilter::Info);
            let exec = execution_from_env()?;
            let opts = commands::EvalOptions {
                run: args.run,
                out: args.out,
                episodes: args.episodes,
                seed: args.seed,
                traces: args.traces,
                field_cache: args.field_cache,
            };
            let s = commands::eval_run(&opts, exec)?;
            writeln!(
                out,
                "episodes {}: reward {:.4} ± {:.4}, stop stage {:.3}, stop histogram {:?}",
                s.episodes, s.avg_reward, s.reward_se, s.avg_stop_stage, s.stop_hist
            )
            .map_err(io)?;
        }
        Command::Oracle(args) => {
            let base = match &args.config {
                Some(p) => match RunConfig::load(p)?.env {
                    EnvConfig::Lingauss(c) => c,
                    other => {
                        return Err(CliError::Validation(format!(
                            "oracle needs a lingauss env, config has {}",
                            other.name()
                        )))
                    }
                },
                None => LinGaussConfig::default(),
            };
            let costs = if args.cost.is_empty() {
                match &base.cost {
                    CostFn::Constant { value } => vec![*value],
                    _ => return Err(CliError::Validation("oracle needs a constant cost".into())),
                }
            } else {
                args.cost
            };
            let rows = commands::oracle_table(&base, args.horizon, &costs)?;
            commands::write_oracle_csv(&mut *out, &rows).map_err(io)?;
        }
        Command::Verify(args) => {
            init_logging(log::LevelFilter::Warn);
            let exec = execution_from_env()?;
            let suites = if args.suite.is_empty() {
                verify::Suite::ALL.to_vec()
            } else {
                args.suite
                    .iter()
                    .map(|s| {
                        verify::Suite::parse(s)
                            .ok_or_else(|| CliError::Validation(format!("unknown suite {s:?}")))
                    })
                    .collect::<CliResult<_>>()?
            };
            let opts = verify::VerifyOptions {
                seed: args.seed,
                field_cache: args.field_cache,
                ..Default::default()
            };
            let mut failed = Vec::new();
            let mut total = 0;
            for suite in suites {
                for check in verify::run_suite(suite, &opts, exec) {
                    writeln!(out, "{}", check.line()).map_err(io)?;
                    total += 1;
                    if !check.passed {
                        failed.push(check.name);
                    }
                }
            }
            writeln!(out, "{} of {total} checks passed", total - failed.len()).map_err(io)?;
            if !failed.is_empty() {
                return Err(CliError::Verification(failed));
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Output goes to `out`, errors to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
