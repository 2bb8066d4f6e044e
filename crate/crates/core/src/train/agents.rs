//! Design and stopping rules that can drive a rollout.

use serde::{Deserialize, Serialize};

use super::encoding::Encoder;
use crate::env::lingauss::{oracle_continuation_value, LinGaussConfig};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::mdp::{stopping_value, Formulation, RewardSpec, State};
use crate::nn::DenseNet;

/// A design policy together with a stopping rule.
pub trait Agent: Sync {
    /// Noise-free design `μ(s)`.
    fn design(&self, s: &State) -> Result<Vec<f64>>;

    /// Whether the stopping rule fires at `s`.
    fn stop_fires(&self, s: &State, spec: &RewardSpec) -> Result<bool>;
}

/// Gradient of a continuation value with respect to the design.
pub trait Critic: Sync {
    fn value(&self, s: &State, xi: &[f64]) -> Result<f64>;
    fn design_gradient(&self, s: &State, xi: &[f64]) -> Result<Vec<f64>>;
}

/// `r_T^S(s) ≥ continuation`; under the incremental formulation the left
/// side is 0.
pub fn stopping_test_value(s: &State, continuation: f64, spec: &RewardSpec) -> Result<bool> {
    Ok(stopping_value(s, spec)? >= continuation)
}

/// Policy network `μ_w` and critic `Q_η` sharing one input encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub policy: DenseNet,
    pub q: DenseNet,
    pub encoder: Encoder,
}

impl ActorCritic {
    pub fn new<E: Environment + ?Sized>(
        env: &E,
        policy_hidden: &[usize],
        q_hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        let encoder = Encoder::new(env)?;
        let mut p = vec![encoder.policy_len()];
        p.extend_from_slice(policy_hidden);
        p.push(encoder.design_dim());
        let mut q = vec![encoder.q_len()];
        q.extend_from_slice(q_hidden);
        q.push(1);
        Ok(ActorCritic {
            policy: DenseNet::new(&p, crate::rng::derive_seed(seed, &[1]))?,
            q: DenseNet::new(&q, crate::rng::derive_seed(seed, &[2]))?,
            encoder,
        })
    }

    /// Checks that loaded networks fit this encoder.
    pub fn from_parts(policy: DenseNet, q: DenseNet, encoder: Encoder) -> Result<Self> {
        if policy.input_size() != encoder.policy_len() || policy.output_size() != encoder.design_dim() {
            return Err(Error::Shape(format!(
                "policy net {:?} does not fit input {} / design {}",
                policy.sizes(),
                encoder.policy_len(),
                encoder.design_dim()
            )));
        }
        if q.input_size() != encoder.q_len() || q.output_size() != 1 {
            return Err(Error::Shape(format!(
                "critic net {:?} does not fit input {}",
                q.sizes(),
                encoder.q_len()
            )));
        }
        Ok(ActorCritic { policy, q, encoder })
    }

    /// Raw (pre-squash) policy output and its encoded input.
    pub fn raw_design(&self, s: &State) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = self.encoder.policy_input(s)?;
        let raw = self.policy.forward(&x)?;
        Ok((x, raw))
    }

    pub fn continuation(&self, s: &State, xi: &[f64]) -> Result<f64> {
        Ok(self.q.forward(&self.encoder.q_input(s, xi)?)?[0])
    }

    pub fn critic(&self) -> QCritic<'_> {
        QCritic {
            net: &self.q,
            encoder: &self.encoder,
        }
    }
}

/// Stopping rule with the learned critic: `r_T^S(s) ≥ Q(s, μ(s))`.
pub fn stopping_test(s: &State, ac: &ActorCritic, spec: &RewardSpec) -> Result<bool> {
    let xi = ac.design(s)?;
    stopping_test_value(s, ac.continuation(s, &xi)?, spec)
}

impl Agent for ActorCritic {
    fn design(&self, s: &State) -> Result<Vec<f64>> {
        let (_, raw) = self.raw_design(s)?;
        Ok(self.encoder.squash(&raw))
    }

    fn stop_fires(&self, s: &State, spec: &RewardSpec) -> Result<bool> {
        stopping_test(s, self, spec)
    }
}

/// Borrowed view of a critic network.
#[derive(Debug, Clone, Copy)]
pub struct QCritic<'a> {
    pub net: &'a DenseNet,
    pub encoder: &'a Encoder,
}

impl Critic for QCritic<'_> {
    fn value(&self, s: &State, xi: &[f64]) -> Result<f64> {
        Ok(self.net.forward(&self.encoder.q_input(s, xi)?)?[0])
    }

    fn design_gradient(&self, s: &State, xi: &[f64]) -> Result<Vec<f64>> {
        let g = self.net.grad_input(&self.encoder.q_input(s, xi)?)?;
        Ok(self.encoder.design_gradient(&g))
    }
}

/// Closed-form linear-Gaussian policy: the upper design bound, stopping by
/// the analytic continuation value.
#[derive(Debug, Clone)]
pub struct OracleAgent {
    cfg: LinGaussConfig,
}

impl OracleAgent {
    pub fn new(cfg: LinGaussConfig) -> Result<Self> {
        cfg.validate()?;
        if !cfg.cost.is_design_independent() {
            return Err(Error::Unsupported(
                "the analytic policy needs design-independent costs".into(),
            ));
        }
        Ok(OracleAgent { cfg })
    }
}

impl Agent for OracleAgent {
    fn design(&self, _s: &State) -> Result<Vec<f64>> {
        Ok(vec![self.cfg.design_hi])
    }

    fn stop_fires(&self, s: &State, spec: &RewardSpec) -> Result<bool> {
        if s.stage() >= s.horizon() {
            return Ok(true);
        }
        let q = oracle_continuation_value(s, self.cfg.design_hi, &self.cfg, spec)?;
        stopping_test_value(s, q, spec)
    }
}

/// Stopping rule used in place of the learned test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoppingMode {
    Learned,
    /// Stop once `n` experiments have been performed.
    FixedHorizon { n: usize },
    /// Stop once the realised cumulative reward reaches `h`.
    Threshold { h: f64 },
}

/// Any agent's designs with a replacement stopping rule.
#[derive(Debug, Clone, Copy)]
pub struct WithStopping<'a, A: ?Sized> {
    pub inner: &'a A,
    pub mode: StoppingMode,
}

/// Cumulative realised reward `KL(b_k ‖ b_0) + Σ c`, independent of the
/// bookkeeping formulation.
pub fn cumulative_reward(s: &State, spec: &RewardSpec) -> Result<f64> {
    stopping_value(s, &spec.with_formulation(Formulation::Terminal))
}

impl<A: Agent + ?Sized> Agent for WithStopping<'_, A> {
    fn design(&self, s: &State) -> Result<Vec<f64>> {
        self.inner.design(s)
    }

    fn stop_fires(&self, s: &State, spec: &RewardSpec) -> Result<bool> {
        match self.mode {
            StoppingMode::Learned => self.inner.stop_fires(s, spec),
            StoppingMode::FixedHorizon { n } => Ok(s.stage() >= n),
            StoppingMode::Threshold { h } => Ok(s.stage() > 0 && cumulative_reward(s, spec)? >= h),
        }
    }
}

/// Constant design, never stops early.
#[derive(Debug, Clone)]
pub struct FixedDesign(pub Vec<f64>);

impl Agent for FixedDesign {
    fn design(&self, _s: &State) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }

    fn stop_fires(&self, _s: &State, _spec: &RewardSpec) -> Result<bool> {
        Ok(false)
    }
}
