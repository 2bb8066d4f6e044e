//! Experiment environments: forward models, observation noise and the
//! belief-state transition they induce.

pub mod convdiff;
pub mod lingauss;

use crate::error::Result;
use crate::mdp::{Belief, State};
use crate::rng::EpisodeRng;

/// A sequential experiment with a known likelihood.
///
/// The environment owns the forward model; [`crate::mdp`] owns rewards and
/// the stopping bookkeeping.
pub trait Environment: Sync {
    /// Everything needed to simulate observations for one episode.
    type Truth: Send + Sync;

    fn horizon(&self) -> usize;
    fn design_dim(&self) -> usize;
    fn obs_dim(&self) -> usize {
        1
    }
    fn design_lo(&self) -> &[f64];
    fn design_hi(&self) -> &[f64];

    /// Per-coordinate divisors applied to designs before they enter a network.
    fn design_scale(&self) -> Vec<f64>;
    /// Divisor applied to observations before they enter a network.
    fn obs_scale(&self) -> f64;

    fn initial_state(&self) -> State;

    fn sample_truth(&self, rng: &mut EpisodeRng) -> Result<Self::Truth>;
    fn truth_theta(&self, truth: &Self::Truth) -> Vec<f64>;

    /// Draws `y_k` for the experiment `xi` performed from `state`.
    fn observe(
        &self,
        truth: &Self::Truth,
        state: &State,
        xi: &[f64],
        rng: &mut EpisodeRng,
    ) -> Result<Vec<f64>>;

    /// Posterior belief and physical state after observing `y` at `xi`.
    fn advance(&self, state: &State, xi: &[f64], y: &[f64]) -> Result<(Belief, Vec<f64>)>;

    /// Weighted observation nodes approximating the prior predictive of `y`
    /// given `state` and `xi`; weights sum to one.
    fn predictive_nodes(&self, state: &State, xi: &[f64]) -> Result<Vec<(f64, Vec<f64>)>>;

    /// Projects a design onto the feasible box.
    fn clamp_design(&self, xi: &[f64]) -> Vec<f64> {
        xi.iter()
            .zip(self.design_lo().iter().zip(self.design_hi()))
            .map(|(x, (lo, hi))| x.clamp(*lo, *hi))
            .collect()
    }
}
