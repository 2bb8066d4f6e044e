//! Explicit finite-volume solver for
//! `∂G/∂t = D ∇²G − u(t)·∇G + S(z; θ)` on the unit square.
//!
//! Cell-centred unknowns, central differences for diffusion, first-order
//! upwind fluxes for convection, zero flux through the boundary and forward
//! Euler in time. Every interior face flux is added to one cell and
//! subtracted from its neighbour, so the discrete mass changes only through
//! the source term.

use std::f64::consts::PI;

use rand::Rng;
use serde::Serialize;

use super::ConvDiffConfig;
use crate::error::{Error, Result};

/// Concentration snapshots at the measurement times, for one source location.
///
/// Snapshot `k` is laid out row-major with cell `(ix, iy)` at `iy * n + ix`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationFields {
    n: usize,
    snapshots: Vec<Vec<f64>>,
}

/// Result of interpolating a field at a sensor position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub value: f64,
    /// The position was outside the domain and was moved onto its boundary.
    pub clamped: bool,
}

impl ConcentrationFields {
    pub fn from_snapshots(n: usize, snapshots: Vec<Vec<f64>>) -> Result<Self> {
        if snapshots.iter().any(|s| s.len() != n * n) {
            return Err(Error::Shape(format!("snapshots must have {} cells", n * n)));
        }
        Ok(ConcentrationFields { n, snapshots })
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshot(&self, k: usize) -> &[f64] {
        &self.snapshots[k]
    }

    pub fn snapshots(&self) -> &[Vec<f64>] {
        &self.snapshots
    }

    /// Bilinear interpolation of snapshot `k` between cell centres.
    pub fn probe(&self, pos: [f64; 2], k: usize) -> Result<Probe> {
        if k >= self.snapshots.len() {
            return Err(Error::State(format!(
                "no snapshot {k}; {} available",
                self.snapshots.len()
            )));
        }
        Ok(interpolate(&self.snapshots[k], self.n, pos))
    }
}

pub(crate) fn interpolate(field: &[f64], n: usize, pos: [f64; 2]) -> Probe {
    let clamped = !(0.0..=1.0).contains(&pos[0]) || !(0.0..=1.0).contains(&pos[1]);
    let (i0, tx) = bracket(pos[0].clamp(0.0, 1.0), n);
    let (j0, ty) = bracket(pos[1].clamp(0.0, 1.0), n);
    let (i1, j1) = ((i0 + 1).min(n - 1), (j0 + 1).min(n - 1));
    let g00 = field[j0 * n + i0];
    let g10 = field[j0 * n + i1];
    let g01 = field[j1 * n + i0];
    let g11 = field[j1 * n + i1];
    let value = (1.0 - ty) * ((1.0 - tx) * g00 + tx * g10) + ty * ((1.0 - tx) * g01 + tx * g11);
    Probe { value, clamped }
}

/// Lower cell-centre index and fractional offset along one axis.
fn bracket(x: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let f = (x * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let i = (f.floor() as usize).min(n - 2);
    let t = f - i as f64;
    // snap round-off so cell centres hit nodes exactly
    let t = if t < 1e-12 {
        0.0
    } else if t > 1.0 - 1e-12 {
        1.0
    } else {
        t
    };
    (i, t)
}

/// Gaussian source density `θ_s/(2π θ_h²) exp(−|z − θ|²/(2 θ_h²))`.
pub fn source_term(z: [f64; 2], theta: [f64; 2], cfg: &ConvDiffConfig) -> f64 {
    let w2 = cfg.source_width * cfg.source_width;
    let r2 = (theta[0] - z[0]).powi(2) + (theta[1] - z[1]).powi(2);
    cfg.source_strength / (2.0 * PI * w2) * (-r2 / (2.0 * w2)).exp()
}

/// Time-stepping plan shared by every solve with a given config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPlan {
    pub h: f64,
    pub dt: f64,
    pub substeps: usize,
}

impl StepPlan {
    pub fn new(cfg: &ConvDiffConfig) -> Result<Self> {
        let n = cfg.fv_resolution;
        let h = 1.0 / n as f64;
        let bound = cfg.stability_bound();
        let target = match cfg.dt_pde {
            Some(dt) => {
                if !(dt.is_finite() && dt > 0.0) {
                    return Err(Error::Config(format!("dt_pde must be > 0, got {dt}")));
                }
                if dt > bound {
                    return Err(Error::Config(format!(
                        "dt_pde {dt} exceeds the explicit stability bound {bound}"
                    )));
                }
                dt
            }
            None => 0.4 * bound,
        };
        // land exactly on every measurement time
        let substeps = (cfg.measurement_dt / target).ceil().max(1.0) as usize;
        Ok(StepPlan {
            h,
            dt: cfg.measurement_dt / substeps as f64,
            substeps,
        })
    }
}

/// Explicit solver state; exposed so the conservation audit can step it.
#[derive(Debug, Clone)]
pub struct FvState {
    n: usize,
    plan: StepPlan,
    diffusivity: f64,
    velocity_slope: f64,
    pub time: f64,
    pub field: Vec<f64>,
    source: Vec<f64>,
    flux: Vec<f64>,
}

impl FvState {
    pub fn new(theta: [f64; 2], cfg: &ConvDiffConfig) -> Result<Self> {
        if !theta.iter().all(|t| (0.0..=1.0).contains(t)) {
            return Err(Error::Domain(format!("source location {theta:?} outside [0,1]²")));
        }
        let n = cfg.fv_resolution;
        let plan = StepPlan::new(cfg)?;
        let h = plan.h;
        let mut source = vec![0.0; n * n];
        for iy in 0..n {
            for ix in 0..n {
                let z = [(ix as f64 + 0.5) * h, (iy as f64 + 0.5) * h];
                source[iy * n + ix] = source_term(z, theta, cfg);
            }
        }
        Ok(FvState {
            n,
            plan,
            diffusivity: cfg.diffusivity,
            velocity_slope: cfg.velocity_slope,
            time: 0.0,
            field: vec![0.0; n * n],
            source,
            flux: vec![0.0; n * n],
        })
    }

    pub fn plan(&self) -> StepPlan {
        self.plan
    }

    pub fn mass(&self) -> f64 {
        self.field.iter().sum::<f64>() * self.plan.h * self.plan.h
    }

    pub fn source_rate(&self) -> f64 {
        self.source.iter().sum::<f64>() * self.plan.h * self.plan.h
    }

    pub fn step(&mut self) {
        let n = self.n;
        let h = self.plan.h;
        let dt = self.plan.dt;
        let u = self.velocity_slope * self.time;
        let d_over_h = self.diffusivity / h;
        let div = &mut self.flux;
        div.iter_mut().for_each(|v| *v = 0.0);
        let g = &self.field;
        // x-faces
        for iy in 0..n {
            let row = iy * n;
            for ix in 0..n - 1 {
                let l = row + ix;
                let r = l + 1;
                let upwind = if u >= 0.0 { g[l] } else { g[r] };
                let f = u * upwind - d_over_h * (g[r] - g[l]);
                div[l] -= f;
                div[r] += f;
            }
        }
        // y-faces
        for iy in 0..n - 1 {
            for ix in 0..n {
                let b = iy * n + ix;
                let t = b + n;
                let upwind = if u >= 0.0 { g[b] } else { g[t] };
                let f = u * upwind - d_over_h * (g[t] - g[b]);
                div[b] -= f;
                div[t] += f;
            }
        }
        let inv_h = 1.0 / h;
        for ((gv, dv), sv) in self.field.iter_mut().zip(div.iter()).zip(&self.source) {
            *gv += dt * (dv * inv_h + sv);
        }
        self.time += dt;
    }
}

/// Snapshots at `t = (k+1)·Δt`, `k = 0..N`, labelled as measurement stage `k`.
pub fn solve_forward(theta: [f64; 2], cfg: &ConvDiffConfig) -> Result<ConcentrationFields> {
    let mut st = FvState::new(theta, cfg)?;
    let mut snapshots = Vec::with_capacity(cfg.horizon);
    for _ in 0..cfg.horizon {
        for _ in 0..st.plan.substeps {
            st.step();
        }
        snapshots.push(st.field.clone());
    }
    ConcentrationFields::from_snapshots(cfg.fv_resolution, snapshots)
}

/// Largest per-step relative drift `|ΔM − Δt Σ S A| / M` over a full solve.
pub fn mass_audit(theta: [f64; 2], cfg: &ConvDiffConfig) -> Result<f64> {
    let mut st = FvState::new(theta, cfg)?;
    let injected = st.plan().dt * st.source_rate();
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.horizon * st.plan().substeps {
        let before = st.mass();
        st.step();
        let after = st.mass();
        let scale = after.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(((after - before) - injected).abs() / scale);
    }
    Ok(worst)
}

/// RMS probe errors of two resolutions against a finer reference solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinementReport {
    pub coarse: usize,
    pub fine: usize,
    pub reference: usize,
    pub coarse_error: f64,
    pub fine_error: f64,
}

impl RefinementReport {
    pub fn ratio(&self) -> f64 {
        self.coarse_error / self.fine_error
    }
}

/// Compares resolutions `n` and `2n` against `4n` at `probes` random
/// space-time points near the source.
pub fn refinement_audit(
    theta: [f64; 2],
    cfg: &ConvDiffConfig,
    probes: usize,
    rng: &mut impl Rng,
) -> Result<RefinementReport> {
    let n = cfg.fv_resolution;
    let at = |m: usize| {
        solve_forward(
            theta,
            &ConvDiffConfig {
                fv_resolution: m,
                ..cfg.clone()
            },
        )
    };
    let (coarse, fine, reference) = (at(n)?, at(2 * n)?, at(4 * n)?);
    let reach = 3.0 * cfg.source_width;
    let mut err = [0.0; 2];
    for _ in 0..probes {
        let pos = [
            (theta[0] + rng.random_range(-reach..reach)).clamp(0.0, 1.0),
            (theta[1] + rng.random_range(-reach..reach)).clamp(0.0, 1.0),
        ];
        let k = rng.random_range(0..cfg.horizon);
        let truth = reference.probe(pos, k)?.value;
        err[0] += (coarse.probe(pos, k)?.value - truth).powi(2);
        err[1] += (fine.probe(pos, k)?.value - truth).powi(2);
    }
    let p = probes.max(1) as f64;
    Ok(RefinementReport {
        coarse: n,
        fine: 2 * n,
        reference: 4 * n,
        coarse_error: (err[0] / p).sqrt(),
        fine_error: (err[1] / p).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ConvDiffConfig {
        ConvDiffConfig {
            fv_resolution: 32,
            ..Default::default()
        }
    }

    #[test]
    fn source_values() {
        let cfg = ConvDiffConfig::default();
        let peak = source_term([0.5, 0.5], [0.5, 0.5], &cfg);
        assert!((peak - 2.0 / (2.0 * PI * 0.0025)).abs() < 1e-10);
        assert!((peak - 127.324).abs() < 1e-3);
        let off = source_term([0.5 + 0.15, 0.5], [0.5, 0.5], &cfg);
        assert!((off - peak * (-4.5f64).exp()).abs() < 1e-10);
        assert!((off - 1.41445).abs() < 1e-5);
        assert!((off - 1.4137).abs() < 1e-3);
        let none = ConvDiffConfig {
            source_strength: 0.0,
            ..Default::default()
        };
        assert_eq!(source_term([0.5, 0.5], [0.5, 0.5], &none), 0.0);
    }

    #[test]
    fn source_integrates_to_strength() {
        // fine midpoint quadrature of the bump well inside the domain
        let cfg = ConvDiffConfig::default();
        let m = 2000;
        let h = 1.0 / m as f64;
        let mut total = 0.0;
        for j in 0..m {
            for i in 0..m {
                let z = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
                total += source_term(z, [0.4, 0.6], &cfg) * h * h;
            }
        }
        assert!((total - 2.0).abs() / 2.0 < 1e-6);
    }

    #[test]
    fn zero_source_stays_zero() {
        let cfg = ConvDiffConfig {
            source_strength: 0.0,
            ..small()
        };
        let f = solve_forward([0.3, 0.7], &cfg).unwrap();
        assert_eq!(f.len(), cfg.horizon);
        assert!(f.snapshots().iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn centred_source_peaks_at_centre() {
        let cfg = ConvDiffConfig {
            velocity_slope: 0.0,
            ..small()
        };
        let f = solve_forward([0.5, 0.5], &cfg).unwrap();
        let last = f.snapshot(cfg.horizon - 1);
        let max = last.iter().cloned().fold(f64::MIN, f64::max);
        let n = cfg.fv_resolution;
        // n even: (0.5, 0.5) is the corner shared by four cells
        for (ix, iy) in [(n / 2 - 1, n / 2 - 1), (n / 2, n / 2 - 1), (n / 2 - 1, n / 2), (n / 2, n / 2)] {
            assert!((last[iy * n + ix] - max).abs() <= 1e-12 * max);
        }
    }

    #[test]
    fn unstable_dt_rejected() {
        let cfg = ConvDiffConfig {
            dt_pde: Some(1e-3),
            ..small()
        };
        assert!(matches!(StepPlan::new(&cfg), Err(Error::Config(_))));
        let ok = ConvDiffConfig {
            dt_pde: Some(cfg.stability_bound() * 0.5),
            ..small()
        };
        assert!(StepPlan::new(&ok).is_ok());
    }

    #[test]
    fn out_of_domain_source_rejected() {
        assert!(matches!(
            solve_forward([1.2, 0.5], &small()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn interpolation_hits_nodes_and_blends() {
        let n = 4;
        let field: Vec<f64> = (0..n * n).map(|i| (i * i) as f64 * 0.1).collect();
        let f = ConcentrationFields::from_snapshots(n, vec![field.clone()]).unwrap();
        for iy in 0..n {
            for ix in 0..n {
                let pos = [(ix as f64 + 0.5) / n as f64, (iy as f64 + 0.5) / n as f64];
                assert_eq!(f.probe(pos, 0).unwrap().value, field[iy * n + ix]);
            }
        }
        // corner shared by cells (1,1), (2,1), (1,2), (2,2): plain average
        let p = f.probe([0.5, 0.5], 0).unwrap();
        let avg = (field[5] + field[6] + field[9] + field[10]) / 4.0;
        assert!((p.value - avg).abs() < 1e-12);
        assert!(!p.clamped);
        // a quarter of the way from centre (1,1) towards (2,1)
        let p = f.probe([(1.5 + 0.25) / 4.0, 1.5 / 4.0], 0).unwrap();
        assert!((p.value - (0.75 * field[5] + 0.25 * field[6])).abs() < 1e-12);
        let out = f.probe([1.3, -0.1], 0).unwrap();
        assert!(out.clamped);
        assert_eq!(out.value, field[n - 1]);
        assert!(matches!(f.probe([0.5, 0.5], 1), Err(Error::State(_))));
    }
}
