//! Batch rollouts and their summary statistics.

use serde::Serialize;

use super::agents::{Agent, StoppingMode, WithStopping};
use super::rollout::{rollout_episode, RolloutOptions};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::mdp::{Episode, RewardSpec};
use crate::rng::{derive_seed, stream};

pub const DESIGN_BINS: usize = 20;

/// Per-coordinate histogram of performed designs over the design box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignHistogram {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// `counts[dim][bin]`.
    pub counts: Vec<Vec<usize>>,
}

impl DesignHistogram {
    pub fn new(lo: &[f64], hi: &[f64], bins: usize) -> Self {
        DesignHistogram {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            counts: vec![vec![0; bins]; lo.len()],
        }
    }

    pub fn add(&mut self, xi: &[f64]) {
        for (d, x) in xi.iter().enumerate() {
            let bins = self.counts[d].len();
            let f = (x - self.lo[d]) / (self.hi[d] - self.lo[d]);
            let b = ((f * bins as f64).floor().max(0.0) as usize).min(bins - 1);
            self.counts[d][b] += 1;
        }
    }

    /// Fraction of designs with coordinate `dim` inside `[a, b]`, counting
    /// whole bins whose range lies within it.
    pub fn fraction_within(&self, dim: usize, a: f64, b: f64) -> f64 {
        let bins = self.counts[dim].len();
        let width = (self.hi[dim] - self.lo[dim]) / bins as f64;
        let total: usize = self.counts[dim].iter().sum();
        if total == 0 {
            return 0.0;
        }
        let inside: usize = self.counts[dim]
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let lo = self.lo[dim] + *i as f64 * width;
                lo >= a - 1e-12 && lo + width <= b + 1e-12
            })
            .map(|(_, c)| c)
            .sum();
        inside as f64 / total as f64
    }
}

/// Summary of a batch of episodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchStats {
    pub episodes: usize,
    pub avg_reward: f64,
    /// Standard error of `avg_reward`.
    pub reward_se: f64,
    pub avg_stop_stage: f64,
    /// `stop_hist[τ]` for `τ = 0..=N`; sums to the episode count.
    pub stop_hist: Vec<usize>,
    pub designs: DesignHistogram,
}

impl BatchStats {
    pub fn from_episodes<E: Environment + ?Sized>(env: &E, episodes: &[Episode]) -> Self {
        let n = episodes.len();
        let rewards: Vec<f64> = episodes.iter().map(|e| e.total_reward()).collect();
        let mean = rewards.iter().sum::<f64>() / n.max(1) as f64;
        let var = if n > 1 {
            rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let mut stop_hist = vec![0; env.horizon() + 1];
        let mut designs = DesignHistogram::new(env.design_lo(), env.design_hi(), DESIGN_BINS);
        for e in episodes {
            stop_hist[e.tau] += 1;
            for xi in &e.designs {
                designs.add(xi);
            }
        }
        BatchStats {
            episodes: n,
            avg_reward: mean,
            reward_se: (var / n.max(1) as f64).sqrt(),
            avg_stop_stage: episodes.iter().map(|e| e.tau as f64).sum::<f64>() / n.max(1) as f64,
            stop_hist,
            designs,
        }
    }
}

/// `n` independent rollouts; episode `i` uses the stream `(seed, i)`.
pub fn run_episodes<E, A>(
    agent: &A,
    env: &E,
    spec: &RewardSpec,
    opts: &RolloutOptions,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Episode>>
where
    E: Environment + ?Sized,
    A: Agent + ?Sized,
{
    try_map_indexed(exec, n, |i| {
        let ep_seed = derive_seed(seed, &[i as u64]);
        let mut rng = stream(ep_seed, &[]);
        rollout_episode(agent, env, spec, opts, ep_seed, &mut rng)
    })
}

/// Noise-free rollouts honouring every stopping decision.
pub fn evaluate<E, A>(
    agent: &A,
    env: &E,
    spec: &RewardSpec,
    n_episodes: usize,
    seed: u64,
    exec: Execution,
) -> Result<(BatchStats, Vec<Episode>)>
where
    E: Environment + ?Sized,
    A: Agent + ?Sized,
{
    if n_episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let opts = RolloutOptions::greedy(env.design_dim());
    let eps = run_episodes(agent, env, spec, &opts, n_episodes, seed, exec)?;
    Ok((BatchStats::from_episodes(env, &eps), eps))
}

/// `agent`'s designs, stopping as soon as the realised cumulative reward
/// reaches `h`.
pub fn baseline_threshold<E, A>(
    agent: &A,
    env: &E,
    spec: &RewardSpec,
    h: f64,
    n_episodes: usize,
    seed: u64,
    exec: Execution,
) -> Result<BatchStats>
where
    E: Environment + ?Sized,
    A: Agent + ?Sized,
{
    if h.is_nan() {
        return Err(Error::Config("threshold must not be NaN".into()));
    }
    let wrapped = WithStopping {
        inner: agent,
        mode: StoppingMode::Threshold { h },
    };
    Ok(evaluate(&wrapped, env, spec, n_episodes, seed, exec)?.0)
}
