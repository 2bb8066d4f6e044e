//! Simulating one campaign under an agent.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::agents::Agent;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::mdp::{stage_reward, stopping_value, transition, Episode, RewardSpec};
use crate::rng::EpisodeRng;

/// Per-rollout knobs that change over training.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOptions {
    /// Per-coordinate standard deviation of the design perturbation.
    pub exploration_std: Vec<f64>,
    /// Probability of honouring a fired stopping test.
    pub p_stop: f64,
    /// Also evaluate the stopping test before the first experiment.
    pub allow_stop_at_0: bool,
}

impl RolloutOptions {
    /// Noise-free rollouts that honour every stopping decision.
    pub fn greedy(design_dim: usize) -> Self {
        RolloutOptions {
            exploration_std: vec![0.0; design_dim],
            p_stop: 1.0,
            allow_stop_at_0: false,
        }
    }
}

/// Runs one episode.
///
/// Random draws come from `rng` in a fixed order: the truth, then for each
/// stage the exploration noise, the observation, and one uniform per fired
/// stopping test. Vanilla and curriculum runs therefore share random numbers.
pub fn rollout_episode<E, A>(
    agent: &A,
    env: &E,
    spec: &RewardSpec,
    opts: &RolloutOptions,
    seed: u64,
    rng: &mut EpisodeRng,
) -> Result<Episode>
where
    E: Environment + ?Sized,
    A: Agent + ?Sized,
{
    if opts.exploration_std.len() != env.design_dim() {
        return Err(Error::Shape("exploration_std must match the design dimension".into()));
    }
    let noise: Vec<Option<Normal<f64>>> = opts
        .exploration_std
        .iter()
        .map(|s| {
            if *s > 0.0 {
                Normal::new(0.0, *s).map(Some).map_err(|e| Error::Config(e.to_string()))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let horizon = env.horizon();
    let truth = env.sample_truth(rng)?;
    let mut s = env.initial_state();
    let mut ep = Episode {
        stop_values: vec![stopping_value(&s, spec)?],
        states: Vec::with_capacity(horizon + 1),
        designs: Vec::new(),
        observations: Vec::new(),
        stage_rewards: Vec::new(),
        terminal_reward: 0.0,
        tau: 0,
        theta_true: env.truth_theta(&truth),
        seed,
    };
    let mut stopped = opts.allow_stop_at_0 && honours(agent.stop_fires(&s, spec)?, opts, rng);
    while !stopped {
        let k = s.stage();
        let mut xi = agent.design(&s)?;
        for (x, n) in xi.iter_mut().zip(&noise) {
            if let Some(n) = n {
                *x += n.sample(rng);
            }
        }
        let xi = env.clamp_design(&xi);
        let y = env.observe(&truth, &s, &xi, rng)?;
        let next = transition(&s, &xi, &y, env)?;
        ep.stage_rewards.push(stage_reward(&s, &xi, &y, &next, spec)?);
        ep.stop_values.push(stopping_value(&next, spec)?);
        ep.designs.push(xi);
        ep.observations.push(y);
        ep.states.push(std::mem::replace(&mut s, next));
        stopped = k + 1 >= horizon || honours(agent.stop_fires(&s, spec)?, opts, rng);
    }
    ep.tau = s.stage();
    ep.terminal_reward = stopping_value(&s, spec)?;
    ep.states.push(s);
    Ok(ep)
}

fn honours(fired: bool, opts: &RolloutOptions, rng: &mut EpisodeRng) -> bool {
    if !fired {
        return false;
    }
    let u: f64 = rng.random();
    u < opts.p_stop
}
