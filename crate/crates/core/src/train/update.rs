//! Actor and critic updates from a batch of episodes.

use super::agents::{Agent, Critic, ActorCritic};
use super::encoding::Encoder;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::mdp::Episode;
use crate::nn::{apply_update, DenseNet, Direction, Optimizer, ParamGradients};

/// Work is split into this many index ranges regardless of thread count, and
/// partial gradients are summed in range order.
const CHUNKS: usize = 16;

fn chunked_sum<F>(exec: Execution, n_items: usize, n_params: usize, f: F) -> Result<ParamGradients>
where
    F: Fn(usize, &mut ParamGradients) -> Result<()> + Sync + Send,
{
    let chunks = CHUNKS.min(n_items.max(1));
    let parts = map_indexed(exec, chunks, |c| -> Result<ParamGradients> {
        let mut g = ParamGradients::zeros(n_params);
        let (a, b) = (c * n_items / chunks, (c + 1) * n_items / chunks);
        for i in a..b {
            f(i, &mut g)?;
        }
        Ok(g)
    });
    let mut total = ParamGradients::zeros(n_params);
    for p in parts {
        total.add_scaled(&p?, 1.0);
    }
    Ok(total)
}

/// `(episode, stage)` pairs with `k < τ`.
fn active_stages(episodes: &[Episode]) -> Vec<(usize, usize)> {
    episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| (0..ep.tau).map(move |k| (e, k)))
        .collect()
}

/// Deterministic policy gradient:
/// `(1/M) Σ_m Σ_{k<τ} ∇_w μ(s_k) · ∇_ξ Q(s_k, ξ)|_{ξ=μ(s_k)}`.
/// Returns the gradient; it is zero when every episode stopped at once.
pub fn policy_gradient<C: Critic + ?Sized>(
    episodes: &[Episode],
    policy: &DenseNet,
    encoder: &Encoder,
    critic: &C,
    exec: Execution,
) -> Result<ParamGradients> {
    let items = active_stages(episodes);
    let mut g = chunked_sum(exec, items.len(), policy.num_params(), |i, acc| {
        let (e, k) = items[i];
        let s = &episodes[e].states[k];
        let x = encoder.policy_input(s)?;
        let raw = policy.forward(&x)?;
        let xi = encoder.squash(&raw);
        let dq = critic.design_gradient(s, &xi)?;
        let upstream: Vec<f64> = dq
            .iter()
            .zip(encoder.squash_jacobian(&raw))
            .map(|(a, b)| a * b)
            .collect();
        policy.accumulate_grad_params(&x, &upstream, acc)
    })?;
    if !episodes.is_empty() {
        g.scale(1.0 / episodes.len() as f64);
    }
    Ok(g)
}

/// One ascent step on the policy. Returns the gradient norm; a non-finite
/// gradient is rejected and reported as an error without touching the net.
pub fn policy_gradient_step<C: Critic + ?Sized>(
    episodes: &[Episode],
    policy: &mut DenseNet,
    encoder: &Encoder,
    critic: &C,
    opt: &mut Optimizer,
    exec: Execution,
) -> Result<f64> {
    let g = policy_gradient(episodes, policy, encoder, critic, exec)?;
    let norm = g.norm();
    apply_update(policy, &g, opt, Direction::Ascent)?;
    Ok(norm)
}

/// Bellman regression samples: encoded `(s_k, ξ_k)` and target
/// `r_k + V_{k+1}`, where `V_{k+1}` is the stopping value if the episode
/// stopped at `k+1` and `Q(s_{k+1}, μ(s_{k+1}))` otherwise.
pub fn bellman_targets(
    episodes: &[&Episode],
    ac: &ActorCritic,
    exec: Execution,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut index = Vec::new();
    for (e, ep) in episodes.iter().enumerate() {
        for k in 0..ep.tau {
            index.push((e, k));
        }
    }
    map_indexed(exec, index.len(), |i| -> Result<(Vec<f64>, f64)> {
        let (e, k) = index[i];
        let ep = episodes[e];
        let x = ac.encoder.q_input(&ep.states[k], &ep.designs[k])?;
        let next = if k + 1 == ep.tau {
            ep.stop_values[k + 1]
        } else {
            let s1 = &ep.states[k + 1];
            ac.continuation(s1, &ac.design(s1)?)?
        };
        Ok((x, ep.stage_rewards[k] + next))
    })
    .into_iter()
    .collect()
}

/// One descent step on `½ mean (Q(x) − target)²` with targets computed from
/// the networks as they are at the start of the call. Returns the mean
/// squared residual before the step.
pub fn q_regression_step(
    episodes: &[&Episode],
    ac: &mut ActorCritic,
    opt: &mut Optimizer,
    exec: Execution,
) -> Result<f64> {
    let samples = bellman_targets(episodes, ac, exec)?;
    if samples.is_empty() {
        return Ok(0.0);
    }
    let q = &ac.q;
    let residuals: Vec<f64> = map_indexed(exec, samples.len(), |i| {
        q.forward(&samples[i].0).map(|o| o[0] - samples[i].1)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let loss = residuals.iter().map(|r| r * r).sum::<f64>() / samples.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("critic loss {loss}")));
    }
    let mut g = chunked_sum(exec, samples.len(), q.num_params(), |i, acc| {
        q.accumulate_grad_params(&samples[i].0, &[residuals[i]], acc)
    })?;
    g.scale(1.0 / samples.len() as f64);
    apply_update(&mut ac.q, &g, opt, Direction::Descent)?;
    Ok(loss)
}
