//! Linear-Gaussian benchmark `y = θ ξ + ε` with a conjugate normal prior,
//! together with its closed-form optimal design and stopping solution.
//!
//! With design-independent costs the expected one-step information gain
//! `½ ln(1 + σ_k² ξ²/σ_ε²)` is increasing in `ξ`, so the optimal design is
//! the upper bound at every stage, and because posterior variances do not
//! depend on observations the optimal stopping sets are deterministic.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::belief::{expected_info_gain_gaussian, gaussian_update, GaussianBelief, NoiseModel};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::mdp::{stopping_value, Belief, CostFn, RewardSpec, State};
use crate::quadrature::NormalRule;
use crate::rng::EpisodeRng;

const PREDICTIVE_NODES: usize = 15;
const BOUND_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinGaussConfig {
    pub prior_mean: f64,
    pub prior_var: f64,
    pub noise_std: f64,
    pub design_lo: f64,
    pub design_hi: f64,
    pub horizon: usize,
    pub cost: CostFn,
}

impl Default for LinGaussConfig {
    fn default() -> Self {
        LinGaussConfig {
            prior_mean: 0.0,
            prior_var: 9.0,
            noise_std: 1.0,
            design_lo: 0.1,
            design_hi: 3.0,
            horizon: 3,
            cost: CostFn::Constant { value: 0.0 },
        }
    }
}

impl LinGaussConfig {
    pub fn with_horizon_and_cost(horizon: usize, cost: f64) -> Self {
        LinGaussConfig {
            horizon,
            cost: CostFn::Constant { value: cost },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.design_lo.is_finite() && self.design_hi.is_finite()) {
            return Err(Error::Config("design_lo and design_hi must be finite".into()));
        }
        if self.design_lo >= self.design_hi {
            return Err(Error::Config(format!(
                "design_lo ({}) must be < design_hi ({})",
                self.design_lo, self.design_hi
            )));
        }
        if !(self.prior_var.is_finite() && self.prior_var > 0.0) {
            return Err(Error::Config(format!("prior_var must be > 0, got {}", self.prior_var)));
        }
        if !self.prior_mean.is_finite() {
            return Err(Error::Config("prior_mean must be finite".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std > 0.0) {
            return Err(Error::Config(format!("noise_std must be > 0, got {}", self.noise_std)));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if let CostFn::Table { values } = &self.cost {
            if values.len() < self.horizon {
                return Err(Error::Config(format!(
                    "cost table has {} entries for horizon {}",
                    values.len(),
                    self.horizon
                )));
            }
        }
        self.cost.validate()
    }

    pub fn prior(&self) -> Result<GaussianBelief> {
        GaussianBelief::new(self.prior_mean, self.prior_var)
    }

    pub fn noise(&self) -> Result<NoiseModel> {
        NoiseModel::new(self.noise_std)
    }

    pub fn reward_spec(&self, formulation: crate::mdp::Formulation) -> RewardSpec {
        RewardSpec::new(formulation, self.cost.clone())
    }
}

#[derive(Debug, Clone)]
pub struct LinGaussEnv {
    cfg: LinGaussConfig,
    prior: GaussianBelief,
    noise: NoiseModel,
    lo: [f64; 1],
    hi: [f64; 1],
    rule: NormalRule,
}

impl LinGaussEnv {
    pub fn new(cfg: LinGaussConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(LinGaussEnv {
            prior: cfg.prior()?,
            noise: cfg.noise()?,
            lo: [cfg.design_lo],
            hi: [cfg.design_hi],
            rule: NormalRule::new(PREDICTIVE_NODES),
            cfg,
        })
    }

    pub fn config(&self) -> &LinGaussConfig {
        &self.cfg
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn check_design(&self, xi: f64) -> Result<()> {
        if !(xi >= self.cfg.design_lo - BOUND_TOL && xi <= self.cfg.design_hi + BOUND_TOL) {
            return Err(Error::Constraint(format!(
                "design {xi} outside [{}, {}]",
                self.cfg.design_lo, self.cfg.design_hi
            )));
        }
        Ok(())
    }

    /// `θ ξ + ε`, `ε ~ N(0, σ_ε²)`.
    pub fn simulate_observation(&self, theta: f64, xi: f64, rng: &mut EpisodeRng) -> Result<f64> {
        self.check_design(xi)?;
        let eps = Normal::new(0.0, self.noise.std_dev())
            .expect("validated std")
            .sample(rng);
        Ok(theta * xi + eps)
    }
}

fn gaussian(b: &Belief) -> Result<&GaussianBelief> {
    match b {
        Belief::Gaussian(g) => Ok(g),
        Belief::Grid(_) => Err(Error::Logic("linear-Gaussian env given a grid belief".into())),
    }
}

impl Environment for LinGaussEnv {
    type Truth = f64;

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn design_dim(&self) -> usize {
        1
    }

    fn design_lo(&self) -> &[f64] {
        &self.lo
    }

    fn design_hi(&self) -> &[f64] {
        &self.hi
    }

    fn design_scale(&self) -> Vec<f64> {
        vec![self.cfg.design_hi.abs().max(self.cfg.design_lo.abs())]
    }

    fn obs_scale(&self) -> f64 {
        // predictive std of y at the largest design under the prior
        let d = self.design_scale()[0];
        (d * d * self.cfg.prior_var + self.noise.variance()).sqrt()
    }

    fn initial_state(&self) -> State {
        State::initial(Belief::Gaussian(self.prior), Vec::new(), self.cfg.horizon)
    }

    fn sample_truth(&self, rng: &mut EpisodeRng) -> Result<f64> {
        Ok(Normal::new(self.prior.mean(), self.prior.variance().sqrt())
            .expect("validated prior")
            .sample(rng))
    }

    fn truth_theta(&self, truth: &f64) -> Vec<f64> {
        vec![*truth]
    }

    fn observe(
        &self,
        truth: &f64,
        _state: &State,
        xi: &[f64],
        rng: &mut EpisodeRng,
    ) -> Result<Vec<f64>> {
        Ok(vec![self.simulate_observation(*truth, xi[0], rng)?])
    }

    fn advance(&self, state: &State, xi: &[f64], y: &[f64]) -> Result<(Belief, Vec<f64>)> {
        let b = gaussian(state.belief())?;
        let post = gaussian_update(b, xi[0], y[0], &self.noise)?;
        Ok((Belief::Gaussian(post), Vec::new()))
    }

    fn predictive_nodes(&self, state: &State, xi: &[f64]) -> Result<Vec<(f64, Vec<f64>)>> {
        let b = gaussian(state.belief())?;
        let mean = xi[0] * b.mean();
        let sd = (xi[0] * xi[0] * b.variance() + self.noise.variance()).sqrt();
        Ok(self
            .rule
            .nodes
            .iter()
            .zip(&self.rule.weights)
            .map(|(z, w)| (*w, vec![mean + sd * z]))
            .collect())
    }
}

fn require_design_independent(cfg: &LinGaussConfig) -> Result<()> {
    if cfg.cost.is_design_independent() {
        Ok(())
    } else {
        Err(Error::Unsupported(
            "the analytic solution needs design-independent costs".into(),
        ))
    }
}

/// Optimal design: the upper design bound, for every stage and belief.
pub fn oracle_optimal_design(_b: &GaussianBelief, cfg: &LinGaussConfig) -> Result<f64> {
    require_design_independent(cfg)?;
    Ok(cfg.design_hi)
}

/// Expected utility of performing exactly `n` experiments at the optimal
/// design and then stopping.
pub fn oracle_utility(n: usize, cfg: &LinGaussConfig) -> Result<f64> {
    require_design_independent(cfg)?;
    if n < 1 {
        return Err(Error::Domain("at least one experiment is required".into()));
    }
    let noise_var = cfg.noise_std * cfg.noise_std;
    let info = 0.5 * (noise_var + cfg.prior_var * n as f64 * cfg.design_hi * cfg.design_hi).ln()
        - 0.5 * noise_var.ln();
    let cost: f64 = (0..n)
        .map(|i| cfg.cost.cost(i, &[cfg.design_hi]))
        .sum::<Result<f64>>()?;
    Ok(info + cost)
}

/// `oracle_utility(n)` for `n = 1..=N`.
pub fn oracle_utility_curve(cfg: &LinGaussConfig) -> Result<Vec<f64>> {
    (1..=cfg.horizon).map(|n| oracle_utility(n, cfg)).collect()
}

/// Number of experiments maximising the oracle utility; ties go to the
/// smaller count.
pub fn oracle_optimal_stop_stage(cfg: &LinGaussConfig) -> Result<usize> {
    let curve = oracle_utility_curve(cfg)?;
    let mut best = 0;
    for (i, u) in curve.iter().enumerate() {
        if *u > curve[best] {
            best = i;
        }
    }
    Ok(best + 1)
}

/// Whether stopping is optimal at `stage` with belief `b`:
/// `½ ln(1 + σ_k² ξ*²/σ_ε²) + c_k ≤ 0`.
pub fn oracle_stopping_set_member(b: &GaussianBelief, stage: usize, cfg: &LinGaussConfig) -> Result<bool> {
    require_design_independent(cfg)?;
    if stage >= cfg.horizon {
        return Ok(true);
    }
    let noise = cfg.noise()?;
    let gain = expected_info_gain_gaussian(b, cfg.design_hi, &noise)?;
    Ok(gain + cfg.cost.cost(stage, &[cfg.design_hi])? <= 0.0)
}

/// Analytic continuation value `Q_k(s_k, ξ)` under the optimal policy from
/// stage `k+1` on: the stopping value now, plus the expected gain of this
/// experiment, plus the optimal (deterministic) value of continuing.
pub fn oracle_continuation_value(
    state: &State,
    xi: f64,
    cfg: &LinGaussConfig,
    spec: &RewardSpec,
) -> Result<f64> {
    require_design_independent(cfg)?;
    let noise = cfg.noise()?;
    let b = gaussian(state.belief())?;
    let k = state.stage();
    let mut value = stopping_value(state, spec)?
        + expected_info_gain_gaussian(b, xi, &noise)?
        + spec.cost.cost(k, &[xi])?;
    // posterior variances along the optimal path do not depend on y
    let mut variances = Vec::new();
    let mut v = gaussian_update(b, xi, 0.0, &noise)?;
    for _ in (k + 1)..cfg.horizon {
        variances.push(v);
        v = gaussian_update(&v, cfg.design_hi, 0.0, &noise)?;
    }
    let mut future = 0.0;
    for (j, vb) in variances.iter().enumerate().rev() {
        let stage = k + 1 + j;
        let inc = expected_info_gain_gaussian(vb, cfg.design_hi, &noise)?
            + spec.cost.cost(stage, &[cfg.design_hi])?;
        future = (inc + future).max(0.0);
    }
    value += future;
    Ok(value)
}
