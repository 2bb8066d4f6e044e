//! Contaminant source detection on the unit square.
//!
//! A Gaussian source at unknown `θ ∈ [0,1]²` releases contaminant into an
//! initially clean domain; a mobile sensor is moved by the design `ξ_k` and
//! then reads the concentration, so `y_k = G(s_{k+1}, t_k; θ) + ε_k`.
//!
//! The PDE is advanced one measurement interval before the first reading:
//! measurement `k` sees the field at `t = (k+1)·Δt`. At `t = 0` the field is
//! identically zero and a reading there would be pure noise.
//!
//! With the default constants the convective velocity `u = 50 t` stays below
//! 0.1 over the whole episode, so transport is diffusion dominated.
//!
//! The posterior lives on a [`ThetaGrid`]; likelihoods use fields solved at
//! every cell centre and cached (see [`FieldCache`]).

mod fields;
mod solver;

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use fields::{log_likelihood_grid, measure, precompute_fields, FieldCache};
pub use solver::{
    mass_audit, refinement_audit, solve_forward, source_term, ConcentrationFields, FvState, Probe,
    RefinementReport, StepPlan,
};

use crate::belief::{grid_update, GridBelief, NoiseModel, ThetaGrid};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mdp::{Belief, CostFn, Formulation, RewardSpec, State};
use crate::rng::EpisodeRng;

const MIN_FV_RESOLUTION: usize = 32;
const PREDICTIVE_SPAN: f64 = 10.0;

/// How the true source location is drawn for an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthSampling {
    /// `θ ~ U(0,1)²` with a dedicated forward solve.
    #[default]
    Continuous,
    /// A uniformly chosen grid cell centre, reusing the cached fields.
    GridCenter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvDiffConfig {
    pub fv_resolution: usize,
    /// Solver step; `None` picks 0.4 of the stability bound.
    pub dt_pde: Option<f64>,
    pub measurement_dt: f64,
    pub horizon: usize,
    pub source_width: f64,
    pub source_strength: f64,
    pub diffusivity: f64,
    /// `u_x = u_y = velocity_slope · t`.
    pub velocity_slope: f64,
    pub sensor_noise_std: f64,
    /// Per-axis displacement bound: `ξ ∈ [−b, b]²`.
    pub design_bound: f64,
    pub initial_sensor: [f64; 2],
    pub theta_grid: usize,
    pub truth: TruthSampling,
    pub cost: CostFn,
}

impl Default for ConvDiffConfig {
    fn default() -> Self {
        ConvDiffConfig {
            fv_resolution: 48,
            dt_pde: None,
            measurement_dt: 5.0e-4,
            horizon: 4,
            source_width: 0.05,
            source_strength: 2.0,
            diffusivity: 1.0,
            velocity_slope: 10.0 / 0.2,
            sensor_noise_std: 0.05,
            design_bound: 0.25,
            initial_sensor: [0.5, 0.5],
            theta_grid: 50,
            truth: TruthSampling::Continuous,
            cost: CostFn::Constant { value: 0.0 },
        }
    }
}

impl ConvDiffConfig {
    /// Final solve time `N·Δt`.
    pub fn final_time(&self) -> f64 {
        self.horizon as f64 * self.measurement_dt
    }

    /// Largest stable explicit step at the fastest velocity of the episode.
    pub fn stability_bound(&self) -> f64 {
        let h = 1.0 / self.fv_resolution as f64;
        let u = (self.velocity_slope * self.final_time()).abs();
        1.0 / (4.0 * self.diffusivity / (h * h) + 2.0 * u / h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fv_resolution < MIN_FV_RESOLUTION {
            return Err(Error::Config(format!(
                "fv_resolution must be >= {MIN_FV_RESOLUTION}, got {}",
                self.fv_resolution
            )));
        }
        if self.theta_grid < 2 {
            return Err(Error::Config("theta_grid must be >= 2".into()));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        let positive = [
            ("measurement_dt", self.measurement_dt),
            ("source_width", self.source_width),
            ("diffusivity", self.diffusivity),
            ("sensor_noise_std", self.sensor_noise_std),
            ("design_bound", self.design_bound),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.source_strength.is_finite() && self.source_strength >= 0.0) {
            return Err(Error::Config(format!(
                "source_strength must be >= 0, got {}",
                self.source_strength
            )));
        }
        if !self.velocity_slope.is_finite() {
            return Err(Error::Config("velocity_slope must be finite".into()));
        }
        if !self.initial_sensor.iter().all(|p| (0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!(
                "initial_sensor {:?} outside [0,1]²",
                self.initial_sensor
            )));
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
        self.cost.validate()?;
        StepPlan::new(self).map(|_| ())
    }

    pub fn grid(&self) -> Result<ThetaGrid> {
        ThetaGrid::new(self.theta_grid)
    }

    pub fn noise(&self) -> Result<NoiseModel> {
        NoiseModel::new(self.sensor_noise_std)
    }

    pub fn reward_spec(&self, formulation: Formulation) -> RewardSpec {
        RewardSpec::new(formulation, self.cost.clone())
    }
}

/// Per-episode ground truth.
#[derive(Debug, Clone)]
pub enum ConvDiffTruth {
    Exact {
        theta: [f64; 2],
        fields: ConcentrationFields,
    },
    Cell {
        cell: usize,
    },
}

#[derive(Debug)]
pub struct ConvDiffEnv {
    cfg: ConvDiffConfig,
    grid: ThetaGrid,
    noise: NoiseModel,
    cache: Arc<FieldCache>,
    lo: [f64; 2],
    hi: [f64; 2],
    clamps: AtomicU64,
}

impl ConvDiffEnv {
    /// Wraps an existing cache, which must have been built for `cfg`.
    pub fn new(cfg: ConvDiffConfig, cache: Arc<FieldCache>) -> Result<Self> {
        cfg.validate()?;
        if cache.key() != FieldCache::key_for(&cfg) {
            return Err(Error::State("field cache was built for a different config".into()));
        }
        let b = cfg.design_bound;
        Ok(ConvDiffEnv {
            grid: cfg.grid()?,
            noise: cfg.noise()?,
            cache,
            lo: [-b, -b],
            hi: [b, b],
            clamps: AtomicU64::new(0),
            cfg,
        })
    }

    /// Builds the cache in memory.
    pub fn build(cfg: ConvDiffConfig, exec: Execution) -> Result<Self> {
        cfg.validate()?;
        let cache = precompute_fields(&cfg, exec)?;
        Self::new(cfg, Arc::new(cache))
    }

    /// Reuses the cache at `path` when it matches `cfg`, otherwise rebuilds
    /// and rewrites it.
    pub fn with_cache_file(cfg: ConvDiffConfig, path: &Path, exec: Execution) -> Result<Self> {
        cfg.validate()?;
        let cache = FieldCache::load_or_compute(path, &cfg, exec)?;
        Self::new(cfg, Arc::new(cache))
    }

    pub fn config(&self) -> &ConvDiffConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &Arc<FieldCache> {
        &self.cache
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// Number of sensor moves that left the domain and were clamped.
    pub fn clamp_events(&self) -> u64 {
        self.clamps.load(Ordering::Relaxed)
    }

    /// Sensor position after applying `xi` from `pos`, clamped to the domain.
    pub fn move_sensor(&self, pos: &[f64], xi: &[f64]) -> Result<[f64; 2]> {
        if pos.len() != 2 || xi.len() != 2 {
            return Err(Error::Shape("sensor position and design must be 2-D".into()));
        }
        for x in xi {
            if !(x.abs() <= self.cfg.design_bound + 1e-12) {
                return Err(Error::Constraint(format!(
                    "design {xi:?} outside [±{}]²",
                    self.cfg.design_bound
                )));
            }
        }
        let raw = [pos[0] + xi[0], pos[1] + xi[1]];
        let next = [raw[0].clamp(0.0, 1.0), raw[1].clamp(0.0, 1.0)];
        if next != raw {
            self.clamps.fetch_add(1, Ordering::Relaxed);
            log::debug!("sensor clamped from {raw:?} to {next:?}");
        }
        Ok(next)
    }

    /// Noise-free reading of the truth at `pos` for measurement `k`.
    pub fn noiseless(&self, truth: &ConvDiffTruth, pos: [f64; 2], k: usize) -> Result<f64> {
        match truth {
            ConvDiffTruth::Exact { fields, .. } => Ok(fields.probe(pos, k)?.value),
            ConvDiffTruth::Cell { cell } => self.cache.predict(*cell, pos, k),
        }
    }

    pub fn truth_at(&self, theta: [f64; 2]) -> Result<ConvDiffTruth> {
        Ok(ConvDiffTruth::Exact {
            theta,
            fields: solve_forward(theta, &self.cfg)?,
        })
    }

    fn grid_belief<'a>(&self, b: &'a Belief) -> Result<&'a GridBelief> {
        match b {
            Belief::Grid(g) => Ok(g),
            Belief::Gaussian(_) => Err(Error::Logic(
                "convection-diffusion env given a Gaussian belief".into(),
            )),
        }
    }
}

impl Environment for ConvDiffEnv {
    type Truth = ConvDiffTruth;

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn design_dim(&self) -> usize {
        2
    }

    fn design_lo(&self) -> &[f64] {
        &self.lo
    }

    fn design_hi(&self) -> &[f64] {
        &self.hi
    }

    fn design_scale(&self) -> Vec<f64> {
        vec![self.cfg.design_bound; 2]
    }

    fn obs_scale(&self) -> f64 {
        // peak concentration at the source at the final measurement time
        let c = &self.cfg;
        let s = c.source_strength / (4.0 * std::f64::consts::PI * c.diffusivity)
            * (2.0 * c.diffusivity * c.final_time() / (c.source_width * c.source_width)).ln_1p();
        if s > 0.0 {
            s
        } else {
            c.sensor_noise_std
        }
    }

    fn initial_state(&self) -> State {
        State::initial(
            Belief::Grid(GridBelief::uniform(self.grid)),
            self.cfg.initial_sensor.to_vec(),
            self.cfg.horizon,
        )
    }

    fn sample_truth(&self, rng: &mut EpisodeRng) -> Result<ConvDiffTruth> {
        match self.cfg.truth {
            TruthSampling::Continuous => {
                let theta = [rng.random::<f64>(), rng.random::<f64>()];
                self.truth_at(theta)
            }
            TruthSampling::GridCenter => Ok(ConvDiffTruth::Cell {
                cell: rng.random_range(0..self.grid.len()),
            }),
        }
    }

    fn truth_theta(&self, truth: &ConvDiffTruth) -> Vec<f64> {
        match truth {
            ConvDiffTruth::Exact { theta, .. } => theta.to_vec(),
            ConvDiffTruth::Cell { cell } => self.grid.center(*cell).to_vec(),
        }
    }

    fn observe(
        &self,
        truth: &ConvDiffTruth,
        state: &State,
        xi: &[f64],
        rng: &mut EpisodeRng,
    ) -> Result<Vec<f64>> {
        let pos = self.move_sensor(state.physical(), xi)?;
        let g = self.noiseless(truth, pos, state.stage())?;
        let eps = Normal::new(0.0, self.noise.std_dev())
            .expect("validated std")
            .sample(rng);
        Ok(vec![g + eps])
    }

    fn advance(&self, state: &State, xi: &[f64], y: &[f64]) -> Result<(Belief, Vec<f64>)> {
        let b = self.grid_belief(state.belief())?;
        let pos = self.move_sensor(state.physical(), xi)?;
        let ll = log_likelihood_grid(y[0], pos, state.stage(), &self.cache, &self.noise)?;
        Ok((Belief::Grid(grid_update(b, &ll)?), pos.to_vec()))
    }

    fn predictive_nodes(&self, state: &State, xi: &[f64]) -> Result<Vec<(f64, Vec<f64>)>> {
        // trapezoid rule on the Gaussian mixture Σ_c p_c N(g_c, σ²)
        let b = self.grid_belief(state.belief())?;
        let pos = self.move_sensor(state.physical(), xi)?;
        let preds = self.cache.predictions(pos, state.stage())?;
        let masses = b.masses();
        let sd = self.noise.std_dev();
        let (gmin, gmax) = preds
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, z), g| (a.min(*g), z.max(*g)));
        let lo = gmin - PREDICTIVE_SPAN * sd;
        let hi = gmax + PREDICTIVE_SPAN * sd;
        let n = (((hi - lo) / (0.25 * sd)).ceil() as usize).clamp(64, 2000) + 1;
        let step = (hi - lo) / (n - 1) as f64;
        let mut nodes = Vec::with_capacity(n);
        let mut total = 0.0;
        for j in 0..n {
            let y = lo + step * j as f64;
            let dens: f64 = preds
                .iter()
                .zip(&masses)
                .map(|(g, m)| m * self.noise.log_pdf(y - g).exp())
                .sum();
            total += dens;
            nodes.push((dens, vec![y]));
        }
        if !(total > 0.0) {
            return Err(Error::DegeneratePosterior("predictive density vanished".into()));
        }
        for node in &mut nodes {
            node.0 /= total;
        }
        Ok(nodes)
    }
}
