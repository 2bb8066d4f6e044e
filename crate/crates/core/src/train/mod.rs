//! Actor-critic training with learned stopping.
//!
//! Each iteration runs `M` rollouts with the current networks, fits the
//! critic to one-step Bellman targets for a few epochs of minibatches, then
//! takes one deterministic policy-gradient step on the actor.

mod agents;
mod curriculum;
mod encoding;
mod eval;
mod rollout;
mod update;

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use agents::{
    cumulative_reward, stopping_test, stopping_test_value, ActorCritic, Agent, Critic,
    FixedDesign, OracleAgent, QCritic, StoppingMode, WithStopping,
};
pub use curriculum::Curriculum;
pub use encoding::Encoder;
pub use eval::{
    baseline_threshold, evaluate, run_episodes, BatchStats, DesignHistogram, DESIGN_BINS,
};
pub use rollout::{rollout_episode, RolloutOptions};
pub use update::{bellman_targets, policy_gradient, policy_gradient_step, q_regression_step};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mdp::{Episode, Formulation, RewardSpec};
use crate::nn::{Optimizer, OptimizerKind};
use crate::rng::{derive_seed, stream};

const MAX_REJECTED: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub episodes_per_iter: usize,
    pub seed: u64,
    /// Initial exploration std as a fraction of each design range.
    pub exploration_fraction: f64,
    /// Exploration decays linearly in `ℓ/L` down to this fraction of its
    /// initial value.
    pub exploration_floor: f64,
    pub curriculum: Curriculum,
    pub stopping: StoppingMode,
    pub formulation: Formulation,
    pub allow_stop_at_0: bool,
    pub policy_hidden: Vec<usize>,
    pub q_hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
    pub policy_lr: f64,
    pub q_lr: f64,
    /// Policy steps per iteration.
    pub policy_steps: usize,
    /// Passes over the iteration's episodes when fitting the critic.
    pub q_epochs: usize,
    /// Episodes per critic minibatch.
    pub q_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 300,
            episodes_per_iter: 1000,
            seed: 0,
            exploration_fraction: 0.2,
            exploration_floor: 0.1,
            curriculum: Curriculum::default(),
            stopping: StoppingMode::Learned,
            formulation: Formulation::Terminal,
            allow_stop_at_0: false,
            policy_hidden: vec![80, 80],
            q_hidden: vec![80, 80, 80],
            optimizer: OptimizerKind::adam(),
            policy_lr: 5e-4,
            q_lr: 1e-3,
            policy_steps: 1,
            q_epochs: 5,
            q_batch: 16,
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile: `L = 60`, `M = 200`.
    pub fn desk() -> Self {
        TrainConfig {
            iterations: 60,
            episodes_per_iter: 200,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 || self.episodes_per_iter < 1 {
            return Err(Error::Config("iterations and episodes_per_iter must be >= 1".into()));
        }
        if !(self.exploration_fraction.is_finite() && self.exploration_fraction >= 0.0) {
            return Err(Error::Config("exploration_fraction must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.exploration_floor) {
            return Err(Error::Config("exploration_floor must be in [0,1]".into()));
        }
        if self.q_batch < 1 {
            return Err(Error::Config("q_batch must be >= 1".into()));
        }
        if self.policy_hidden.contains(&0) || self.q_hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be >= 1".into()));
        }
        if let StoppingMode::Threshold { h } = self.stopping {
            if h.is_nan() {
                return Err(Error::Config("stopping threshold must not be NaN".into()));
            }
        }
        self.curriculum.validate()?;
        Optimizer::new(self.optimizer, self.policy_lr)?;
        Optimizer::new(self.optimizer, self.q_lr)?;
        Ok(())
    }

    /// Per-coordinate exploration std at zero-based iteration `iter`.
    pub fn exploration_std<E: Environment + ?Sized>(&self, env: &E, iter: usize) -> Vec<f64> {
        let decay = (1.0 - iter as f64 / self.iterations as f64).max(self.exploration_floor);
        env.design_lo()
            .iter()
            .zip(env.design_hi())
            .map(|(lo, hi)| self.exploration_fraction * (hi - lo) * decay)
            .collect()
    }
}

/// Metrics of one training iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub avg_reward: f64,
    pub avg_stop_stage: f64,
    pub p_stop: f64,
    pub loss_q: f64,
    pub grad_norm: f64,
    pub stop_hist: Vec<usize>,
    pub designs: DesignHistogram,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConvergenceRecord {
    pub rows: Vec<IterationRecord>,
}

impl ConvergenceRecord {
    pub const HEADER: &'static str = "iter,avg_reward,avg_stop_stage,p_stop,loss_q,grad_norm";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.iter, r.avg_reward, r.avg_stop_stage, r.p_stop, r.loss_q, r.grad_norm
            )?;
        }
        Ok(())
    }

    /// `iter,stage,count`.
    pub fn write_stop_histogram_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,stage,count")?;
        for r in &self.rows {
            for (stage, c) in r.stop_hist.iter().enumerate() {
                writeln!(w, "{},{},{}", r.iter, stage, c)?;
            }
        }
        Ok(())
    }

    /// `iter,dim,bin_lo,bin_hi,count`.
    pub fn write_design_histogram_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,dim,bin_lo,bin_hi,count")?;
        for r in &self.rows {
            write_design_rows(&mut w, &r.iter.to_string(), &r.designs)?;
        }
        Ok(())
    }

    /// Mean of `f` over the last `n` rows.
    pub fn tail_mean(&self, n: usize, f: impl Fn(&IterationRecord) -> f64) -> f64 {
        let tail = &self.rows[self.rows.len().saturating_sub(n)..];
        tail.iter().map(f).sum::<f64>() / tail.len().max(1) as f64
    }
}

pub fn write_design_rows<W: Write>(mut w: W, label: &str, h: &DesignHistogram) -> Result<()> {
    for (d, counts) in h.counts.iter().enumerate() {
        let width = (h.hi[d] - h.lo[d]) / counts.len() as f64;
        for (b, c) in counts.iter().enumerate() {
            let lo = h.lo[d] + b as f64 * width;
            writeln!(w, "{label},{d},{lo},{},{c}", lo + width)?;
        }
    }
    Ok(())
}

/// Trained networks and their learning curve.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: ActorCritic,
    pub record: ConvergenceRecord,
}

/// Called after every iteration with the zero-based index.
pub type IterationHook<'a> = dyn FnMut(usize, &ActorCritic, &IterationRecord) -> Result<()> + 'a;

pub fn train<E: Environment + ?Sized>(
    env: &E,
    cost: &crate::mdp::CostFn,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    train_with(env, cost, cfg, exec, &mut |_, _, _| Ok(()))
}

/// Algorithm 1. A pure function of `(env, cost, cfg)`: execution mode and
/// thread count do not change any output bit.
pub fn train_with<E: Environment + ?Sized>(
    env: &E,
    cost: &crate::mdp::CostFn,
    cfg: &TrainConfig,
    exec: Execution,
    hook: &mut IterationHook<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = RewardSpec::new(cfg.formulation, cost.clone());
    let mut ac = ActorCritic::new(env, &cfg.policy_hidden, &cfg.q_hidden, cfg.seed)?;
    let mut policy_opt = Optimizer::new(cfg.optimizer, cfg.policy_lr)?;
    let mut q_opt = Optimizer::new(cfg.optimizer, cfg.q_lr)?;
    let mut record = ConvergenceRecord::default();
    let mut rejected = 0;
    let total = cfg.iterations;
    for iter in 0..total {
        let p_stop = cfg.curriculum.p_stop(iter, total);
        let opts = RolloutOptions {
            exploration_std: cfg.exploration_std(env, iter),
            p_stop,
            allow_stop_at_0: cfg.allow_stop_at_0,
        };
        let agent = WithStopping {
            inner: &ac,
            mode: cfg.stopping,
        };
        let episodes = run_episodes(
            &agent,
            env,
            &spec,
            &opts,
            cfg.episodes_per_iter,
            derive_seed(cfg.seed, &[0x726f, iter as u64]),
            exec,
        )?;
        let stats = BatchStats::from_episodes(env, &episodes);

        let loss_q = fit_critic(&episodes, &mut ac, &mut q_opt, cfg, iter, exec, &mut rejected)?;

        let mut grad_norm = 0.0;
        for _ in 0..cfg.policy_steps {
            let critic = ac.q.clone();
            let view = QCritic {
                net: &critic,
                encoder: &ac.encoder,
            };
            match policy_gradient_step(
                &episodes,
                &mut ac.policy,
                &ac.encoder,
                &view,
                &mut policy_opt,
                exec,
            ) {
                Ok(n) => {
                    grad_norm = n;
                    rejected = 0;
                }
                Err(e @ Error::NonFinite(_)) => note_rejection(&mut rejected, &e)?,
                Err(e) => return Err(e),
            }
        }

        let row = IterationRecord {
            iter,
            avg_reward: stats.avg_reward,
            avg_stop_stage: stats.avg_stop_stage,
            p_stop,
            loss_q,
            grad_norm,
            stop_hist: stats.stop_hist,
            designs: stats.designs,
        };
        log::info!(
            "iter {iter}: reward {:.4} stop {:.3} p_stop {:.3} loss_q {:.4e} |g| {:.3e}",
            row.avg_reward,
            row.avg_stop_stage,
            row.p_stop,
            row.loss_q,
            row.grad_norm
        );
        hook(iter, &ac, &row)?;
        record.rows.push(row);
    }
    Ok(TrainOutcome { agent: ac, record })
}

fn note_rejection(rejected: &mut usize, e: &Error) -> Result<()> {
    *rejected += 1;
    log::warn!("update rejected ({} in a row): {e}", *rejected);
    if *rejected >= MAX_REJECTED {
        return Err(Error::NonFinite(format!(
            "{MAX_REJECTED} consecutive updates rejected; last: {e}"
        )));
    }
    Ok(())
}

/// Critic epochs over shuffled minibatches; returns the mean loss of the
/// final epoch.
fn fit_critic(
    episodes: &[Episode],
    ac: &mut ActorCritic,
    opt: &mut Optimizer,
    cfg: &TrainConfig,
    iter: usize,
    exec: Execution,
    rejected: &mut usize,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    let mut last = 0.0;
    for epoch in 0..cfg.q_epochs {
        let mut rng = stream(cfg.seed, &[0x7165, iter as u64, epoch as u64]);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.q_batch) {
            let batch: Vec<&Episode> = chunk.iter().map(|&i| &episodes[i]).collect();
            match q_regression_step(&batch, ac, opt, exec) {
                Ok(l) => {
                    sum += l;
                    batches += 1;
                    *rejected = 0;
                }
                Err(e @ Error::NonFinite(_)) => note_rejection(rejected, &e)?,
                Err(e) => return Err(e),
            }
        }
        last = sum / batches.max(1) as f64;
    }
    Ok(last)
}
