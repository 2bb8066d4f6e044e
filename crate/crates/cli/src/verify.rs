//! Property suites bundled behind `stopbed verify`.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use stopbed::env::convdiff::{mass_audit, refinement_audit, solve_forward, ConvDiffConfig, ConvDiffEnv, FieldCache};
use stopbed::env::lingauss::{oracle_stopping_set_member, LinGaussConfig, LinGaussEnv};
use stopbed::env::Environment;
use stopbed::exec::{try_map_indexed, Execution};
use stopbed::mdp::{equivalence_check_with, transition, Belief, Formulation, KlFn, Trajectory};
use stopbed::nn::{finite_difference_check, DenseNet};
use stopbed::rng::{derive_seed, stream, EpisodeRng};
use stopbed::train::{evaluate, Agent, OracleAgent};

use crate::error::CliResult;

/// Utilities of `n = 1..=4` experiments at costs 0, −0.5 and −0.25.
pub const PUBLISHED_TABLE: [(f64, [f64; 4]); 3] = [
    (0.0, [2.203, 2.547, 2.749, 2.892]),
    (-0.5, [1.703, 1.547, 1.249, 0.892]),
    (-0.25, [1.953, 2.047, 1.999, 1.892]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradcheck,
    Equivalence,
    Fv,
    Oracle,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Gradcheck, Suite::Equivalence, Suite::Fv, Suite::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradcheck => "gradcheck",
            Suite::Equivalence => "equivalence",
            Suite::Fv => "fv",
            Suite::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Check {
    fn timed(name: &str, f: impl FnOnce() -> CliResult<(bool, String)>) -> Self {
        let t = Instant::now();
        let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        Check {
            name: name.into(),
            passed,
            detail,
            seconds: t.elapsed().as_secs_f64(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    pub nets: usize,
    pub trajectories: usize,
    pub grid_env: ConvDiffConfig,
    pub field_cache: Option<PathBuf>,
    pub oracle_episodes: usize,
    pub probes: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 7,
            nets: 100,
            trajectories: 1000,
            grid_env: ConvDiffConfig {
                theta_grid: 25,
                ..Default::default()
            },
            field_cache: None,
            oracle_episodes: 10_000,
            probes: 10,
        }
    }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions, exec: Execution) -> Vec<Check> {
    match suite {
        Suite::Gradcheck => vec![gradcheck(opts)],
        Suite::Equivalence => vec![
            equivalence_gaussian(opts, Belief::kl, exec),
            equivalence_grid(opts, Belief::kl, exec),
        ],
        Suite::Fv => vec![fv_mass(), fv_refinement(opts), fv_zero_source()],
        Suite::Oracle => vec![oracle_table(), oracle_stopping_sets(opts), oracle_policy(opts, exec)],
    }
}

/// Backpropagation against central differences on random nets.
pub fn gradcheck(opts: &VerifyOptions) -> Check {
    Check::timed("gradcheck", || {
        let mut rng = stream(opts.seed, &[0x6763]);
        let mut worst = 0.0f64;
        for i in 0..opts.nets {
            let mut sizes = vec![rng.random_range(1..=6)];
            for _ in 0..rng.random_range(1..=3) {
                sizes.push(rng.random_range(2..=12));
            }
            sizes.push(if i % 2 == 0 { 1 } else { rng.random_range(1..=3) });
            let net = DenseNet::new(&sizes, derive_seed(opts.seed, &[i as u64]))?;
            let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
            let u: Vec<f64> = (0..net.output_size()).map(|_| rng.random_range(-1.0..1.0)).collect();
            worst = worst.max(finite_difference_check(&net, &x, &u, 1e-6)?.worst());
        }
        Ok((worst <= 1e-5, format!("{} nets, worst relative error {worst:.2e} (limit 1e-5)", opts.nets)))
    })
}

fn random_trajectory<E: Environment>(env: &E, rng: &mut EpisodeRng) -> stopbed::Result<Trajectory> {
    let truth = env.sample_truth(rng)?;
    let tau = rng.random_range(0..=env.horizon());
    let mut s = env.initial_state();
    let (mut designs, mut observations) = (Vec::new(), Vec::new());
    for _ in 0..tau {
        let xi: Vec<f64> = env
            .design_lo()
            .iter()
            .zip(env.design_hi())
            .map(|(lo, hi)| rng.random_range(*lo..=*hi))
            .collect();
        let y = env.observe(&truth, &s, &xi, rng)?;
        s = transition(&s, &xi, &y, env)?;
        designs.push(xi);
        observations.push(y);
    }
    Ok(Trajectory {
        designs,
        observations,
        tau,
    })
}

/// Largest expected-score gap and mean |realised gap| over random
/// trajectories.
fn equivalence_gaps<E: Environment>(
    env: &E,
    spec_cost: &stopbed::mdp::CostFn,
    n: usize,
    seed: u64,
    kl: KlFn,
    exec: Execution,
) -> CliResult<(f64, f64)> {
    let spec_t = stopbed::mdp::RewardSpec::new(Formulation::Terminal, spec_cost.clone());
    let spec_i = spec_t.with_formulation(Formulation::Incremental);
    let gaps = try_map_indexed(exec, n, |i| {
        let mut rng = stream(seed, &[i as u64]);
        let traj = random_trajectory(env, &mut rng)?;
        equivalence_check_with(env, &traj, &spec_t, &spec_i, kl)
    })?;
    let worst = gaps.iter().map(|g| g.expected).fold(0.0, f64::max);
    let realized = gaps.iter().map(|g| g.realized.abs()).sum::<f64>() / n.max(1) as f64;
    Ok((worst, realized))
}

pub fn equivalence_gaussian(opts: &VerifyOptions, kl: KlFn, exec: Execution) -> Check {
    Check::timed("equivalence/gaussian", || {
        let cfg = LinGaussConfig::with_horizon_and_cost(4, -0.25);
        let env = LinGaussEnv::new(cfg.clone())?;
        let (worst, realized) = equivalence_gaps(&env, &cfg.cost, opts.trajectories, opts.seed, kl, exec)?;
        Ok((
            worst <= 1e-9,
            format!(
                "{} trajectories, max expected gap {worst:.2e} (limit 1e-9); mean |pathwise gap| {realized:.3}",
                opts.trajectories
            ),
        ))
    })
}

pub fn grid_env(opts: &VerifyOptions, exec: Execution) -> CliResult<ConvDiffEnv> {
    let cfg = &opts.grid_env;
    let cache = match &opts.field_cache {
        Some(p) => FieldCache::load_or_compute(p, cfg, exec)?,
        None => stopbed::env::convdiff::precompute_fields(cfg, exec)?,
    };
    Ok(ConvDiffEnv::new(cfg.clone(), Arc::new(cache))?)
}

pub fn equivalence_grid(opts: &VerifyOptions, kl: KlFn, exec: Execution) -> Check {
    Check::timed("equivalence/grid", || {
        let env = grid_env(opts, exec)?;
        let cost = env.config().cost.clone();
        let (worst, realized) = equivalence_gaps(&env, &cost, opts.trajectories, opts.seed, kl, exec)?;
        let g = env.config().theta_grid;
        Ok((
            worst <= 1e-6,
            format!(
                "{} trajectories on a {g}x{g} grid, max expected gap {worst:.2e} (limit 1e-6); mean |pathwise gap| {realized:.3}",
                opts.trajectories
            ),
        ))
    })
}

pub fn fv_mass() -> Check {
    Check::timed("fv/mass", || {
        let cfg = ConvDiffConfig::default();
        let mut worst = 0.0f64;
        for theta in [[0.5, 0.5], [0.2, 0.8], [0.03, 0.05]] {
            worst = worst.max(mass_audit(theta, &cfg)?);
        }
        Ok((worst <= 1e-6, format!("max relative drift per step {worst:.2e} (limit 1e-6)")))
    })
}

pub fn fv_refinement(opts: &VerifyOptions) -> Check {
    Check::timed("fv/refinement", || {
        let cfg = ConvDiffConfig::default();
        let mut rng = stream(opts.seed, &[0x6676]);
        let r = refinement_audit([0.35, 0.6], &cfg, opts.probes, &mut rng)?;
        Ok((
            r.ratio() >= 1.7,
            format!(
                "error {}→{}: {:.3e}, {}→{}: {:.3e}, ratio {:.2} (limit 1.7)",
                r.coarse, r.reference, r.coarse_error, r.fine, r.reference, r.fine_error, r.ratio()
            ),
        ))
    })
}

pub fn fv_zero_source() -> Check {
    Check::timed("fv/zero-source", || {
        let cfg = ConvDiffConfig {
            source_strength: 0.0,
            ..Default::default()
        };
        let f = solve_forward([0.5, 0.5], &cfg)?;
        let max = f.snapshots().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok((max == 0.0, format!("max |G| {max:e}")))
    })
}

/// Closed-form utilities against the published table.
pub fn oracle_table() -> Check {
    Check::timed("oracle/table", || {
        let rows = crate::commands::oracle_table(
            &LinGaussConfig::default(),
            4,
            &PUBLISHED_TABLE.map(|(c, _)| c),
        )?;
        let mut worst = 0.0f64;
        for r in &rows {
            let (_, want) = PUBLISHED_TABLE.iter().find(|(c, _)| *c == r.cost).expect("listed cost");
            worst = worst.max((r.utility - want[r.n - 1]).abs());
        }
        let flags: Vec<usize> = rows.iter().filter(|r| r.optimal).map(|r| r.n).collect();
        Ok((
            worst <= 5e-4 && flags == [4, 1, 2],
            format!("12 entries, max |Δ| {worst:.1e} (limit 5e-4); optimal n {flags:?}"),
        ))
    })
}

/// The oracle agent's stopping decisions against the analytic stopping sets
/// along simulated paths.
pub fn oracle_stopping_sets(opts: &VerifyOptions) -> Check {
    Check::timed("oracle/stopping-sets", || {
        let mut checked = 0;
        let mut mismatched = 0;
        for (c, _) in PUBLISHED_TABLE {
            let cfg = LinGaussConfig::with_horizon_and_cost(4, c);
            let env = LinGaussEnv::new(cfg.clone())?;
            let agent = OracleAgent::new(cfg.clone())?;
            let mut rng = stream(opts.seed, &[0x7373]);
            for form in [Formulation::Terminal, Formulation::Incremental] {
                let spec = cfg.reward_spec(form);
                for _ in 0..50 {
                    let theta = env.sample_truth(&mut rng)?;
                    let mut s = env.initial_state();
                    while s.stage() < cfg.horizon {
                        let Belief::Gaussian(b) = s.belief() else {
                            unreachable!("linear-Gaussian beliefs are Gaussian")
                        };
                        checked += 1;
                        if agent.stop_fires(&s, &spec)? != oracle_stopping_set_member(b, s.stage(), &cfg)? {
                            mismatched += 1;
                        }
                        let y = env.observe(&theta, &s, &[cfg.design_hi], &mut rng)?;
                        s = transition(&s, &[cfg.design_hi], &y, &env)?;
                    }
                }
            }
        }
        Ok((mismatched == 0, format!("{mismatched} of {checked} decisions differ")))
    })
}

/// Monte Carlo reward of the analytic policy against the published optimum.
pub fn oracle_policy(opts: &VerifyOptions, exec: Execution) -> Check {
    Check::timed("oracle/policy", || {
        let mut parts = Vec::new();
        let mut ok = true;
        for (c, row) in PUBLISHED_TABLE {
            let cfg = LinGaussConfig::with_horizon_and_cost(4, c);
            let env = LinGaussEnv::new(cfg.clone())?;
            let agent = OracleAgent::new(cfg.clone())?;
            let target = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (stats, _) = evaluate(
                &agent,
                &env,
                &cfg.reward_spec(Formulation::Terminal),
                opts.oracle_episodes,
                derive_seed(opts.seed, &[0x6f70]),
                exec,
            )?;
            let z = (stats.avg_reward - target) / stats.reward_se;
            ok &= z.abs() <= 3.0;
            parts.push(format!("c={c}: {:.4}±{:.4} vs {target} (z={z:+.2})", stats.avg_reward, stats.reward_se));
        }
        Ok((ok, format!("{} episodes each; {}", opts.oracle_episodes, parts.join("; "))))
    })
}
