//! Belief-state MDP with an explicit stopping action.
//!
//! A [`State`] carries the stage index, the cached posterior, the physical
//! state (e.g. sensor position) and the full experiment history. Rewards come
//! in two bookkeeping styles selected by [`Formulation`]: everything paid at
//! stopping (KL to the prior plus accumulated costs), or one-step KL plus cost
//! paid after each experiment.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::belief::{gaussian_kl, grid_kl, GaussianBelief, GridBelief};
use crate::env::Environment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Belief {
    Gaussian(GaussianBelief),
    Grid(GridBelief),
}

impl Belief {
    /// KL(self ‖ other).
    pub fn kl(&self, other: &Belief) -> Result<f64> {
        match (self, other) {
            (Belief::Gaussian(a), Belief::Gaussian(b)) => Ok(gaussian_kl(a, b)),
            (Belief::Grid(a), Belief::Grid(b)) => grid_kl(a, b),
            _ => Err(Error::Logic("KL between different belief kinds".into())),
        }
    }
}

/// One realised experiment: design and observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub design: Vec<f64>,
    pub observation: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct State {
    stage: usize,
    horizon: usize,
    belief: Belief,
    prior: Arc<Belief>,
    physical: Vec<f64>,
    history: Vec<Experiment>,
    terminal: bool,
}

impl State {
    pub fn initial(prior: Belief, physical: Vec<f64>, horizon: usize) -> Self {
        State {
            stage: 0,
            horizon,
            belief: prior.clone(),
            prior: Arc::new(prior),
            physical,
            history: Vec::new(),
            terminal: false,
        }
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn belief(&self) -> &Belief {
        &self.belief
    }

    pub fn prior(&self) -> &Belief {
        &self.prior
    }

    pub fn physical(&self) -> &[f64] {
        &self.physical
    }

    pub fn history(&self) -> &[Experiment] {
        &self.history
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    Terminal,
    Incremental,
}

/// Per-experiment cost `c_k(ξ_k)`; costs enter rewards with their sign, so
/// they are normally non-positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostFn {
    Constant { value: f64 },
    /// `-‖ξ‖²`
    Quadratic,
    /// One entry per stage.
    Table { values: Vec<f64> },
}

impl CostFn {
    pub fn cost(&self, stage: usize, xi: &[f64]) -> Result<f64> {
        match self {
            CostFn::Constant { value } => Ok(*value),
            CostFn::Quadratic => Ok(-xi.iter().map(|x| x * x).sum::<f64>()),
            CostFn::Table { values } => values.get(stage).copied().ok_or_else(|| {
                Error::Domain(format!("cost table has no entry for stage {stage}"))
            }),
        }
    }

    pub fn is_design_independent(&self) -> bool {
        !matches!(self, CostFn::Quadratic)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CostFn::Constant { value } if !value.is_finite() => {
                Err(Error::Config(format!("constant cost must be finite, got {value}")))
            }
            CostFn::Table { values } if values.iter().any(|v| !v.is_finite()) => {
                Err(Error::Config("cost table entries must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub formulation: Formulation,
    pub cost: CostFn,
}

impl RewardSpec {
    pub fn new(formulation: Formulation, cost: CostFn) -> Self {
        RewardSpec { formulation, cost }
    }

    pub fn constant(formulation: Formulation, cost: f64) -> Self {
        RewardSpec::new(formulation, CostFn::Constant { value: cost })
    }

    pub fn with_formulation(&self, formulation: Formulation) -> Self {
        RewardSpec {
            formulation,
            cost: self.cost.clone(),
        }
    }

    /// Σ_{i<k} c_i(ξ_i) over the state's history.
    pub fn accumulated_cost(&self, s: &State) -> Result<f64> {
        s.history
            .iter()
            .enumerate()
            .map(|(i, e)| self.cost.cost(i, &e.design))
            .sum()
    }
}

/// `s_{k+1} = F_k(s_k, ξ_k, y_k)`.
pub fn transition<E: Environment + ?Sized>(
    s: &State,
    xi: &[f64],
    y: &[f64],
    env: &E,
) -> Result<State> {
    if s.terminal {
        return Err(Error::Logic("transition from the terminal state".into()));
    }
    if s.stage >= s.horizon {
        return Err(Error::Logic(format!(
            "stage {} is already at the horizon {}",
            s.stage, s.horizon
        )));
    }
    let (belief, physical) = env.advance(s, xi, y)?;
    let mut history = s.history.clone();
    history.push(Experiment {
        design: xi.to_vec(),
        observation: y.to_vec(),
    });
    Ok(State {
        stage: s.stage + 1,
        horizon: s.horizon,
        belief,
        prior: Arc::clone(&s.prior),
        physical,
        history,
        terminal: false,
    })
}

/// `KL(a ‖ b)` between two beliefs of the same kind.
pub type KlFn = fn(&Belief, &Belief) -> Result<f64>;

/// Terminal reward collected if the campaign stops at `s` (`r_T^S`).
pub fn stopping_value(s: &State, spec: &RewardSpec) -> Result<f64> {
    stopping_value_with(s, spec, Belief::kl)
}

fn stopping_value_with(s: &State, spec: &RewardSpec, kl: KlFn) -> Result<f64> {
    if s.terminal {
        return Err(Error::Logic("stopping value of the terminal state".into()));
    }
    match spec.formulation {
        Formulation::Incremental => Ok(0.0),
        Formulation::Terminal => Ok(kl(&s.belief, &s.prior)? + spec.accumulated_cost(s)?),
    }
}

/// Moves to the absorbing terminal state and returns the terminal reward.
pub fn stop(s: &State, spec: &RewardSpec) -> Result<(State, f64)> {
    let reward = stopping_value(s, spec)?;
    let mut t = s.clone();
    t.terminal = true;
    Ok((t, reward))
}

/// Immediate reward `r_k` for performing `xi` at `s` and landing in `s_next`.
pub fn stage_reward(
    s: &State,
    xi: &[f64],
    _y: &[f64],
    s_next: &State,
    spec: &RewardSpec,
) -> Result<f64> {
    stage_reward_with(s, xi, s_next, spec, Belief::kl)
}

fn stage_reward_with(
    s: &State,
    xi: &[f64],
    s_next: &State,
    spec: &RewardSpec,
    kl: KlFn,
) -> Result<f64> {
    match spec.formulation {
        Formulation::Terminal => Ok(0.0),
        Formulation::Incremental => Ok(kl(&s_next.belief, &s.belief)? + spec.cost.cost(s.stage, xi)?),
    }
}

/// Realised trajectory of one campaign.
#[derive(Debug, Clone)]
pub struct Episode {
    pub states: Vec<State>,
    pub designs: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
    pub stage_rewards: Vec<f64>,
    pub terminal_reward: f64,
    /// `r_T^S(s_k)` for every visited state `k = 0..=tau`.
    pub stop_values: Vec<f64>,
    pub tau: usize,
    pub theta_true: Vec<f64>,
    pub seed: u64,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        total_reward(self)
    }

    pub fn record(&self) -> EpisodeRecord {
        EpisodeRecord {
            seed: self.seed,
            theta_true: self.theta_true.clone(),
            designs: self.designs.clone(),
            observations: self.observations.clone(),
            stage_rewards: self.stage_rewards.clone(),
            terminal_reward: self.terminal_reward,
            tau: self.tau,
        }
    }
}

pub fn total_reward(e: &Episode) -> f64 {
    e.stage_rewards.iter().sum::<f64>() + e.terminal_reward
}

/// A realised `(ξ, y)` sequence with its stopping stage, independent of any
/// reward bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub designs: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
    pub tau: usize,
}

impl Trajectory {
    pub fn from_episode(e: &Episode) -> Self {
        Trajectory {
            designs: e.designs.clone(),
            observations: e.observations.clone(),
            tau: e.tau,
        }
    }

    fn validate(&self, horizon: usize) -> Result<()> {
        if self.designs.len() != self.tau || self.observations.len() != self.tau {
            return Err(Error::Logic(format!(
                "trajectory with tau={} has {} designs and {} observations",
                self.tau,
                self.designs.len(),
                self.observations.len()
            )));
        }
        if self.tau > horizon {
            return Err(Error::Logic(format!(
                "tau={} exceeds horizon {horizon}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// States `s_0..=s_tau` visited by a trajectory.
pub fn replay<E: Environment + ?Sized>(env: &E, traj: &Trajectory) -> Result<Vec<State>> {
    traj.validate(env.horizon())?;
    let mut states = vec![env.initial_state()];
    for (xi, y) in traj.designs.iter().zip(&traj.observations) {
        let next = transition(states.last().expect("non-empty"), xi, y, env)?;
        states.push(next);
    }
    Ok(states)
}

/// Total reward of a trajectory scored under `spec`.
pub fn score<E: Environment + ?Sized>(env: &E, traj: &Trajectory, spec: &RewardSpec) -> Result<f64> {
    let states = replay(env, traj)?;
    score_states(&states, traj, spec, Belief::kl)
}

fn score_states(states: &[State], traj: &Trajectory, spec: &RewardSpec, kl: KlFn) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..traj.tau {
        total += stage_reward_with(&states[k], &traj.designs[k], &states[k + 1], spec, kl)?;
    }
    Ok(total + stopping_value_with(&states[traj.tau], spec, kl)?)
}

/// Expected score of a trajectory: each stage's reward (and each stage's
/// change in the stopping value) is replaced by its conditional expectation
/// over `y_k` given the realised state and design.
pub fn expected_score<E: Environment + ?Sized>(
    env: &E,
    traj: &Trajectory,
    spec: &RewardSpec,
) -> Result<f64> {
    let states = replay(env, traj)?;
    expected_score_states(env, &states, traj, spec, Belief::kl)
}

fn expected_score_states<E: Environment + ?Sized>(
    env: &E,
    states: &[State],
    traj: &Trajectory,
    spec: &RewardSpec,
    kl: KlFn,
) -> Result<f64> {
    let mut total = stopping_value_with(&states[0], spec, kl)?;
    for k in 0..traj.tau {
        let s = &states[k];
        let xi = &traj.designs[k];
        let here = stopping_value_with(s, spec, kl)?;
        for (w, y) in env.predictive_nodes(s, xi)? {
            let next = transition(s, xi, &y, env)?;
            let gain = stage_reward_with(s, xi, &next, spec, kl)? + stopping_value_with(&next, spec, kl)? - here;
            total += w * gain;
        }
    }
    Ok(total)
}

/// Difference between the terminal and incremental bookkeeping of the same
/// trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceGap {
    /// |expected_T − expected_I|: vanishes up to rounding and quadrature.
    pub expected: f64,
    /// Realised `total_T − total_I`: a sum of zero-mean terms, not zero
    /// path by path.
    pub realized: f64,
}

pub fn equivalence_check<E: Environment + ?Sized>(
    env: &E,
    traj: &Trajectory,
    spec_t: &RewardSpec,
    spec_i: &RewardSpec,
) -> Result<EquivalenceGap> {
    equivalence_check_with(env, traj, spec_t, spec_i, Belief::kl)
}

/// [`equivalence_check`] with a caller-supplied divergence.
pub fn equivalence_check_with<E: Environment + ?Sized>(
    env: &E,
    traj: &Trajectory,
    spec_t: &RewardSpec,
    spec_i: &RewardSpec,
    kl: KlFn,
) -> Result<EquivalenceGap> {
    if spec_t.formulation != Formulation::Terminal || spec_i.formulation != Formulation::Incremental
    {
        return Err(Error::Logic(
            "equivalence check needs a terminal and an incremental spec".into(),
        ));
    }
    if spec_t.cost != spec_i.cost {
        return Err(Error::Logic("the two specs use different costs".into()));
    }
    let states = replay(env, traj)?;
    let realized =
        score_states(&states, traj, spec_t, kl)? - score_states(&states, traj, spec_i, kl)?;
    let expected = expected_score_states(env, &states, traj, spec_t, kl)?
        - expected_score_states(env, &states, traj, spec_i, kl)?;
    Ok(EquivalenceGap {
        expected: expected.abs(),
        realized,
    })
}

/// One episode per line, for offline analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub theta_true: Vec<f64>,
    pub designs: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
    pub stage_rewards: Vec<f64>,
    pub terminal_reward: f64,
    pub tau: usize,
}

pub fn write_episode_records<W: Write>(mut w: W, records: &[EpisodeRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_episode_records<R: BufRead>(r: R) -> Result<Vec<EpisodeRecord>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::gaussian_kl;
    use crate::env::lingauss::{LinGaussConfig, LinGaussEnv};
    use crate::quadrature::NormalRule;

    fn env(cost: f64) -> LinGaussEnv {
        LinGaussEnv::new(LinGaussConfig::with_horizon_and_cost(3, cost)).unwrap()
    }

    #[test]
    fn transition_applies_the_update() {
        let e = env(0.0);
        let s0 = e.initial_state();
        let s1 = transition(&s0, &[3.0], &[3.0], &e).unwrap();
        assert_eq!(s1.stage(), 1);
        assert_eq!(s1.history().len(), 1);
        let Belief::Gaussian(b) = s1.belief() else { panic!() };
        assert!((b.mean() - 81.0 / 82.0).abs() < 1e-12);
        assert!((b.variance() - 9.0 / 82.0).abs() < 1e-12);
        assert_eq!(s1.prior(), s0.belief());
    }

    #[test]
    fn terminal_state_is_absorbing() {
        let e = env(0.0);
        let spec = RewardSpec::constant(Formulation::Terminal, 0.0);
        let (t, r) = stop(&e.initial_state(), &spec).unwrap();
        assert_eq!(r, 0.0);
        assert!(t.is_terminal());
        assert!(matches!(transition(&t, &[1.0], &[0.0], &e), Err(Error::Logic(_))));
        assert!(stop(&t, &spec).is_err());
        let mut s = e.initial_state();
        for _ in 0..3 {
            s = transition(&s, &[1.0], &[0.0], &e).unwrap();
        }
        assert!(matches!(transition(&s, &[1.0], &[0.0], &e), Err(Error::Logic(_))));
    }

    #[test]
    fn stop_rewards() {
        let e = env(-0.5);
        let term = RewardSpec::constant(Formulation::Terminal, -0.5);
        let inc = term.with_formulation(Formulation::Incremental);
        let s0 = e.initial_state();
        assert_eq!(stop(&s0, &inc).unwrap().1, 0.0);
        let s1 = transition(&s0, &[3.0], &[3.0], &e).unwrap();
        let kl = s1.belief().kl(s0.belief()).unwrap();
        assert!((stop(&s1, &term).unwrap().1 - (kl - 0.5)).abs() < 1e-15);
        assert_eq!(stop(&s1, &inc).unwrap().1, 0.0);

        // E_y[r_T] after one experiment at ξ = 3 is 2.2034 − 0.5 = 1.703
        let rule = NormalRule::new(15);
        let expected = rule.expect(0.0, (9.0f64 * 9.0 + 1.0).sqrt(), |y| {
            let s1 = transition(&s0, &[3.0], &[y], &e).unwrap();
            stop(&s1, &term).unwrap().1
        });
        assert!((expected - 1.703).abs() < 5e-4);
    }

    #[test]
    fn stage_rewards_by_formulation() {
        let e = env(0.0);
        let s0 = e.initial_state();
        let term = RewardSpec::constant(Formulation::Terminal, 0.0);
        let inc = RewardSpec::constant(Formulation::Incremental, 0.0);
        let s1 = transition(&s0, &[3.0], &[1.0], &e).unwrap();
        assert_eq!(stage_reward(&s0, &[3.0], &[1.0], &s1, &term).unwrap(), 0.0);
        let rule = NormalRule::new(15);
        let er = rule.expect(0.0, 82f64.sqrt(), |y| {
            let s1 = transition(&s0, &[3.0], &[y], &e).unwrap();
            stage_reward(&s0, &[3.0], &[y], &s1, &inc).unwrap()
        });
        assert!((er - 0.5 * 82f64.ln()).abs() < 1e-10);
        let quad = RewardSpec::new(Formulation::Incremental, CostFn::Quadratic);
        let r = stage_reward(&s0, &[0.2, 0.1], &[1.0], &s1, &quad).unwrap();
        let kl = s1.belief().kl(s0.belief()).unwrap();
        assert!((r - (kl - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn cumulative_kl_is_monotone_for_zero_mean_paths() {
        let e = env(0.0);
        let s0 = e.initial_state();
        let mut s = s0.clone();
        let mut last = 0.0;
        for _ in 0..3 {
            s = transition(&s, &[3.0], &[0.0], &e).unwrap();
            let kl = s.belief().kl(s0.belief()).unwrap();
            assert!(kl >= last);
            last = kl;
        }
    }

    #[test]
    fn equivalence_in_expectation_not_pathwise() {
        let e = env(-0.25);
        let term = RewardSpec::constant(Formulation::Terminal, -0.25);
        let inc = term.with_formulation(Formulation::Incremental);
        let traj = Trajectory {
            designs: vec![vec![3.0], vec![3.0]],
            observations: vec![vec![0.0], vec![0.0]],
            tau: 2,
        };
        let gap = equivalence_check(&e, &traj, &term, &inc).unwrap();
        assert!(gap.expected < 1e-12, "{}", gap.expected);
        // all means stay at 0: KL(b2‖b0) − KL(b1‖b0) − KL(b2‖b1)
        let b = |v: f64| GaussianBelief::new(0.0, v).unwrap();
        let (b0, b1, b2) = (b(9.0), b(9.0 / 82.0), b(9.0 / 163.0));
        let direct = gaussian_kl(&b2, &b0) - gaussian_kl(&b1, &b0) - gaussian_kl(&b2, &b1);
        assert!((gap.realized - direct).abs() < 1e-12);
        assert!((direct - (2.049942585065958 - 1.8045064037102794)).abs() < 1e-9);

        let empty = Trajectory {
            designs: vec![],
            observations: vec![],
            tau: 0,
        };
        let gap = equivalence_check(&e, &empty, &term, &inc).unwrap();
        assert_eq!((gap.expected, gap.realized), (0.0, 0.0));
        assert!(matches!(
            equivalence_check(&e, &empty, &inc, &term),
            Err(Error::Logic(_))
        ));
        let bad = Trajectory {
            designs: vec![vec![1.0]],
            observations: vec![],
            tau: 1,
        };
        assert!(matches!(score(&e, &bad, &term), Err(Error::Logic(_))));
    }

    #[test]
    fn episode_records_round_trip() {
        let rec = EpisodeRecord {
            seed: 7,
            theta_true: vec![0.25, 0.75],
            designs: vec![vec![0.1, -0.2]],
            observations: vec![vec![0.013]],
            stage_rewards: vec![0.0],
            terminal_reward: 1.5,
            tau: 1,
        };
        let mut buf = Vec::new();
        write_episode_records(&mut buf, &[rec.clone(), rec.clone()]).unwrap();
        assert_eq!(buf.iter().filter(|b| **b == b'\n').count(), 2);
        let back = read_episode_records(buf.as_slice()).unwrap();
        assert_eq!(back, vec![rec.clone(), rec]);
    }

    #[test]
    fn cost_functions() {
        assert_eq!(CostFn::Constant { value: -0.5 }.cost(3, &[1.0]).unwrap(), -0.5);
        assert!((CostFn::Quadratic.cost(0, &[0.2, 0.1]).unwrap() + 0.05).abs() < 1e-15);
        let t = CostFn::Table { values: vec![-0.1, -0.2] };
        assert_eq!(t.cost(1, &[]).unwrap(), -0.2);
        assert!(t.cost(2, &[]).is_err());
        assert!(CostFn::Constant { value: f64::NAN }.validate().is_err());
    }
}
