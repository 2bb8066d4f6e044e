//! `train`, `eval` and `oracle`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use stopbed::env::convdiff::{ConvDiffEnv, FieldCache};
use stopbed::env::lingauss::{oracle_optimal_stop_stage, oracle_utility, LinGaussConfig, LinGaussEnv};
use stopbed::env::Environment;
use stopbed::exec::Execution;
use stopbed::mdp::{Belief, CostFn, Episode, RewardSpec};
use stopbed::nn::DenseNet;
use stopbed::train::{
    evaluate, train_with, write_design_rows, ActorCritic, BatchStats, ConvergenceRecord, Encoder,
    TrainOutcome, WithStopping,
};

use crate::config::{EnvConfig, Manifest, RunConfig};
use crate::error::{CliError, CliResult};

pub const CHECKPOINT_EVERY: usize = 50;
pub const MANIFEST: &str = "manifest.toml";
pub const CONVERGENCE_CSV: &str = "convergence.csv";

pub enum BuiltEnv {
    Lingauss(LinGaussEnv),
    Convdiff(ConvDiffEnv),
}

macro_rules! with_env {
    ($built:expr, $e:ident => $body:expr) => {
        match $built {
            BuiltEnv::Lingauss($e) => $body,
            BuiltEnv::Convdiff($e) => $body,
        }
    };
}

pub fn build_env(env: &EnvConfig, field_cache: Option<&Path>, exec: Execution) -> CliResult<BuiltEnv> {
    Ok(match env {
        EnvConfig::Lingauss(c) => BuiltEnv::Lingauss(LinGaussEnv::new(c.clone())?),
        EnvConfig::Convdiff(c) => {
            let cache = match field_cache {
                Some(p) => FieldCache::load_or_compute(p, c, exec)?,
                None => stopbed::env::convdiff::precompute_fields(c, exec)?,
            };
            BuiltEnv::Convdiff(ConvDiffEnv::new(c.clone(), Arc::new(cache))?)
        }
    })
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(CliError::io(path))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(CliError::io(path))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> CliResult<()> {
    w.flush().map_err(CliError::io(path))
}

/// Writes `policy.bin` and `q.bin` into `dir`.
pub fn save_agent(ac: &ActorCritic, dir: &Path) -> CliResult<()> {
    create_dir(dir)?;
    for (name, net) in [("policy.bin", &ac.policy), ("q.bin", &ac.q)] {
        let path = dir.join(name);
        let mut w = create(&path)?;
        net.write_checkpoint(&mut w)?;
        finish(w, &path)?;
    }
    Ok(())
}

pub fn load_agent<E: Environment + ?Sized>(env: &E, dir: &Path) -> CliResult<ActorCritic> {
    let read = |name: &str| -> CliResult<DenseNet> {
        let path = dir.join(name);
        let f = File::open(&path).map_err(CliError::io(&path))?;
        DenseNet::read_checkpoint(std::io::BufReader::new(f)).map_err(|e| {
            CliError::Core(stopbed::Error::Format(format!("{}: {e}", path.display())))
        })
    };
    Ok(ActorCritic::from_parts(read("policy.bin")?, read("q.bin")?, Encoder::new(env)?)?)
}

pub fn write_record(record: &ConvergenceRecord, dir: &Path) -> CliResult<()> {
    let path = dir.join(CONVERGENCE_CSV);
    let mut w = create(&path)?;
    record.write_csv(&mut w)?;
    finish(w, &path)?;
    let path = dir.join("stop_histogram.csv");
    let mut w = create(&path)?;
    record.write_stop_histogram_csv(&mut w)?;
    finish(w, &path)?;
    let path = dir.join("design_histogram.csv");
    let mut w = create(&path)?;
    record.write_design_histogram_csv(&mut w)?;
    finish(w, &path)
}

/// Trains, writing the manifest first, checkpoints every
/// [`CHECKPOINT_EVERY`] iterations, then the CSVs and final networks.
pub fn train_run(cfg: &RunConfig, exec: Execution) -> CliResult<TrainOutcome> {
    cfg.validate()?;
    create_dir(&cfg.out)?;
    let manifest = cfg.out.join(MANIFEST);
    fs::write(&manifest, Manifest::new(cfg).to_toml()?).map_err(CliError::io(&manifest))?;

    let env = build_env(&cfg.env, cfg.field_cache.as_deref(), exec)?;
    let ckpt = cfg.out.join("checkpoints");
    let mut failure = None;
    let mut hook = |iter: usize, ac: &ActorCritic, _: &_| {
        if (iter + 1) % CHECKPOINT_EVERY == 0 {
            if let Err(e) = save_agent(ac, &ckpt.join(format!("iter_{:04}", iter + 1))) {
                let msg = e.to_string();
                failure = Some(e);
                return Err(stopbed::Error::State(msg));
            }
        }
        Ok(())
    };
    let out = with_env!(&env, e => train_with(e, cfg.env.cost(), &cfg.train, exec, &mut hook));
    let out = match (out, failure) {
        (Err(_), Some(e)) => return Err(e),
        (out, _) => out?,
    };
    write_record(&out.record, &cfg.out)?;
    save_agent(&out.agent, &cfg.out)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub run: PathBuf,
    pub out: Option<PathBuf>,
    pub episodes: usize,
    pub seed: u64,
    /// Episodes written to `traces.csv`.
    pub traces: usize,
    pub field_cache: Option<PathBuf>,
}

/// Evaluates the final networks of a training run.
pub fn eval_run(opts: &EvalOptions, exec: Execution) -> CliResult<BatchStats> {
    if opts.episodes == 0 {
        return Err(CliError::Validation("eval needs at least one episode".into()));
    }
    let cfg = RunConfig::load(&opts.run.join(MANIFEST))?;
    let cache = opts.field_cache.as_deref().or(cfg.field_cache.as_deref());
    let env = build_env(&cfg.env, cache, exec)?;
    let out = opts.out.clone().unwrap_or_else(|| opts.run.join("eval"));
    create_dir(&out)?;
    let spec = RewardSpec::new(cfg.train.formulation, cfg.env.cost().clone());
    with_env!(&env, e => {
        let ac = load_agent(e, &opts.run)?;
        let agent = WithStopping { inner: &ac, mode: cfg.train.stopping };
        let (stats, eps) = evaluate(&agent, e, &spec, opts.episodes, opts.seed, exec)?;
        write_eval(&stats, &eps[..opts.traces.min(eps.len())], &out)?;
        Ok(stats)
    })
}

fn write_eval(stats: &BatchStats, traced: &[Episode], dir: &Path) -> CliResult<()> {
    let path = dir.join("metrics.csv");
    let mut w = create(&path)?;
    let io = |e: std::io::Error| CliError::Io { path: dir.to_path_buf(), source: e };
    writeln!(w, "episodes,avg_reward,reward_se,avg_stop_stage").map_err(io)?;
    writeln!(
        w,
        "{},{},{},{}",
        stats.episodes, stats.avg_reward, stats.reward_se, stats.avg_stop_stage
    )
    .map_err(io)?;
    finish(w, &path)?;

    let path = dir.join("stop_histogram.csv");
    let mut w = create(&path)?;
    writeln!(w, "stage,count").map_err(io)?;
    for (k, c) in stats.stop_hist.iter().enumerate() {
        writeln!(w, "{k},{c}").map_err(io)?;
    }
    finish(w, &path)?;

    let path = dir.join("design_histogram.csv");
    let mut w = create(&path)?;
    writeln!(w, "set,dim,bin_lo,bin_hi,count").map_err(io)?;
    write_design_rows(&mut w, "eval", &stats.designs)?;
    finish(w, &path)?;

    let path = dir.join("traces.csv");
    let mut w = create(&path)?;
    write_traces(&mut w, traced).map_err(io)?;
    finish(w, &path)
}

fn belief_summary(b: &Belief) -> (Vec<f64>, Vec<f64>) {
    match b {
        Belief::Gaussian(g) => (vec![g.mean()], vec![g.variance().sqrt()]),
        Belief::Grid(g) => {
            let (m, s) = g.summary();
            (m.to_vec(), s.to_vec())
        }
    }
}

fn columns(name: &str, n: usize) -> String {
    (0..n).map(|i| format!(",{name}_{i}")).collect()
}

fn values(v: &[f64]) -> String {
    v.iter().map(|x| format!(",{x}")).collect()
}

fn blanks(n: usize) -> String {
    ",".repeat(n)
}

/// One row per visited state: the state's sensor position and posterior
/// summary, and the experiment performed from it (blank at `τ`).
fn write_traces<W: Write>(mut w: W, episodes: &[Episode]) -> std::io::Result<()> {
    let Some(first) = episodes.first() else {
        return writeln!(w, "episode,stage,tau");
    };
    let s0 = &first.states[0];
    let (m0, _) = belief_summary(s0.belief());
    let n_theta = first.theta_true.len();
    let n_pos = s0.physical().len();
    let n_xi = episodes
        .iter()
        .find_map(|e| e.designs.first().map(Vec::len))
        .unwrap_or(0);
    let n_y = episodes
        .iter()
        .find_map(|e| e.observations.first().map(Vec::len))
        .unwrap_or(0);
    writeln!(
        w,
        "episode,stage,tau{}{}{}{}{}{}",
        columns("theta", n_theta),
        columns("position", n_pos),
        columns("post_mean", m0.len()),
        columns("post_sd", m0.len()),
        columns("design", n_xi),
        columns("observation", n_y)
    )?;
    for (i, e) in episodes.iter().enumerate() {
        for (k, s) in e.states.iter().enumerate() {
            let (m, sd) = belief_summary(s.belief());
            let (xi, y) = match (e.designs.get(k), e.observations.get(k)) {
                (Some(xi), Some(y)) => (values(xi), values(y)),
                _ => (blanks(n_xi), blanks(n_y)),
            };
            writeln!(
                w,
                "{i},{k},{}{}{}{}{}{xi}{y}",
                e.tau,
                values(&e.theta_true),
                values(s.physical()),
                values(&m),
                values(&sd)
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub n: usize,
    pub cost: f64,
    pub utility: f64,
    pub optimal: bool,
}

/// Expected utility of `n = 1..=horizon` experiments at each constant cost.
pub fn oracle_table(base: &LinGaussConfig, horizon: usize, costs: &[f64]) -> CliResult<Vec<OracleRow>> {
    let mut rows = Vec::new();
    for &c in costs {
        let cfg = LinGaussConfig {
            horizon,
            cost: CostFn::Constant { value: c },
            ..base.clone()
        };
        cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        let best = oracle_optimal_stop_stage(&cfg)?;
        for n in 1..=horizon {
            rows.push(OracleRow {
                n,
                cost: c,
                utility: oracle_utility(n, &cfg)?,
                optimal: n == best,
            });
        }
    }
    Ok(rows)
}

pub fn write_oracle_csv<W: Write>(mut w: W, rows: &[OracleRow]) -> std::io::Result<()> {
    writeln!(w, "n,cost,utility,optimal")?;
    for r in rows {
        writeln!(w, "{},{},{:.6},{}", r.n, r.cost, r.utility, r.optimal)?;
    }
    Ok(())
}
