//! Belief states over the unknown parameters and their Bayesian updates.
//!
//! Two representations are supported: a conjugate 1-D Gaussian posterior for
//! the linear-Gaussian benchmark, and a nonparametric posterior density
//! tabulated on a regular grid over the unit square for the source-location
//! problem. Grid densities are kept in log space and normalised so that the
//! midpoint-rule integral over the square is one.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Additive Gaussian observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    std_dev: f64,
}

impl NoiseModel {
    pub fn new(std_dev: f64) -> Result<Self> {
        if !(std_dev.is_finite() && std_dev > 0.0) {
            return Err(Error::Domain(format!(
                "noise std_dev must be finite and > 0, got {std_dev}"
            )));
        }
        Ok(NoiseModel { std_dev })
    }

    pub fn std_dev(&self) -> f64 {
        self.std_dev
    }

    pub fn variance(&self) -> f64 {
        self.std_dev * self.std_dev
    }

    /// log N(residual; 0, σ²).
    pub fn log_pdf(&self, residual: f64) -> f64 {
        let var = self.variance();
        -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * residual * residual / var
    }
}

/// Conjugate Gaussian posterior `N(mean, variance)` over a scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    mean: f64,
    variance: f64,
}

impl GaussianBelief {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        ensure_finite("mean", mean)?;
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::Domain(format!(
                "variance must be finite and > 0, got {variance}"
            )));
        }
        Ok(GaussianBelief { mean, variance })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

/// Posterior after observing `y = θ·ξ + ε`.
pub fn gaussian_update(
    b: &GaussianBelief,
    xi: f64,
    y: f64,
    noise: &NoiseModel,
) -> Result<GaussianBelief> {
    ensure_finite("design", xi)?;
    ensure_finite("observation", y)?;
    let noise_var = noise.variance();
    let precision = xi * xi / noise_var + 1.0 / b.variance;
    let variance = 1.0 / precision;
    let mean = variance * (y * xi / noise_var + b.mean / b.variance);
    GaussianBelief::new(mean, variance)
}

/// KL(a ‖ b) between two univariate normals.
pub fn gaussian_kl(a: &GaussianBelief, b: &GaussianBelief) -> f64 {
    let ratio = a.variance / b.variance;
    let diff = a.mean - b.mean;
    0.5 * (ratio + diff * diff / b.variance - ratio.ln() - 1.0)
}

/// Expected KL(posterior ‖ current) of one experiment at design `xi`:
/// `½ ln(1 + σ²ξ²/σ_ε²)`.
pub fn expected_info_gain_gaussian(b: &GaussianBelief, xi: f64, noise: &NoiseModel) -> Result<f64> {
    ensure_finite("design", xi)?;
    Ok(0.5 * (b.variance * xi * xi / noise.variance()).ln_1p())
}

/// Regular `n × n` lattice of cells covering `[0, 1]²`.
///
/// Cell `(ix, iy)` has flat index `iy * n + ix` and center
/// `((ix + ½)/n, (iy + ½)/n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThetaGrid {
    n: usize,
}

impl ThetaGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("grid resolution must be >= 1".into()));
        }
        Ok(ThetaGrid { n })
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn cell_area(&self) -> f64 {
        let h = 1.0 / self.n as f64;
        h * h
    }

    pub fn center(&self, cell: usize) -> [f64; 2] {
        let h = 1.0 / self.n as f64;
        let ix = cell % self.n;
        let iy = cell / self.n;
        [(ix as f64 + 0.5) * h, (iy as f64 + 0.5) * h]
    }

    pub fn centers(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.len()).map(|c| self.center(c))
    }

    /// Cell containing `point`; points on or outside the boundary map to the
    /// nearest edge cell.
    pub fn cell_of(&self, point: [f64; 2]) -> usize {
        let nf = self.n as f64;
        let ix = ((point[0] * nf).floor().max(0.0) as usize).min(self.n - 1);
        let iy = ((point[1] * nf).floor().max(0.0) as usize).min(self.n - 1);
        iy * self.n + ix
    }
}

/// Posterior density over a [`ThetaGrid`], stored as normalised log-density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridBelief {
    grid: ThetaGrid,
    log_density: Vec<f64>,
}

impl GridBelief {
    /// Uniform density on the unit square.
    pub fn uniform(grid: ThetaGrid) -> Self {
        GridBelief {
            grid,
            log_density: vec![0.0; grid.len()],
        }
    }

    /// Builds a belief from unnormalised log-weights.
    pub fn from_log_weights(grid: ThetaGrid, log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.len() != grid.len() {
            return Err(Error::Shape(format!(
                "expected {} log-weights, got {}",
                grid.len(),
                log_weights.len()
            )));
        }
        let mut b = GridBelief {
            grid,
            log_density: log_weights,
        };
        b.normalize()?;
        Ok(b)
    }

    pub fn grid(&self) -> ThetaGrid {
        self.grid
    }

    pub fn log_density(&self) -> &[f64] {
        &self.log_density
    }

    /// Probability mass per cell (density × cell area).
    pub fn masses(&self) -> Vec<f64> {
        let area = self.grid.cell_area();
        self.log_density.iter().map(|lw| lw.exp() * area).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses().iter().sum()
    }

    pub fn mode_cell(&self) -> usize {
        let mut best = 0;
        for (i, &lw) in self.log_density.iter().enumerate() {
            if lw > self.log_density[best] {
                best = i;
            }
        }
        best
    }

    /// Posterior mean and per-axis standard deviation.
    pub fn summary(&self) -> ([f64; 2], [f64; 2]) {
        let masses = self.masses();
        let mut mean = [0.0; 2];
        for (c, m) in masses.iter().enumerate() {
            let p = self.grid.center(c);
            mean[0] += m * p[0];
            mean[1] += m * p[1];
        }
        let mut var = [0.0; 2];
        for (c, m) in masses.iter().enumerate() {
            let p = self.grid.center(c);
            var[0] += m * (p[0] - mean[0]).powi(2);
            var[1] += m * (p[1] - mean[1]).powi(2);
        }
        (mean, [var[0].sqrt(), var[1].sqrt()])
    }

    fn normalize(&mut self) -> Result<()> {
        let max = self
            .log_density
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::DegeneratePosterior("all cells have zero mass".into()));
        }
        if !max.is_finite() {
            return Err(Error::NonFinite(format!("log-weight {max}")));
        }
        let sum: f64 = self.log_density.iter().map(|lw| (lw - max).exp()).sum();
        let log_norm = max + (sum * self.grid.cell_area()).ln();
        for lw in &mut self.log_density {
            *lw -= log_norm;
        }
        Ok(())
    }
}

/// Adds per-cell log-likelihoods to the log-density and renormalises.
pub fn grid_update(b: &GridBelief, log_likelihood: &[f64]) -> Result<GridBelief> {
    if log_likelihood.len() != b.log_density.len() {
        return Err(Error::Shape(format!(
            "expected {} log-likelihoods, got {}",
            b.log_density.len(),
            log_likelihood.len()
        )));
    }
    if let Some(bad) = log_likelihood
        .iter()
        .find(|v| v.is_nan() || *v == &f64::INFINITY)
    {
        return Err(Error::Domain(format!("invalid log-likelihood {bad}")));
    }
    let weights = b
        .log_density
        .iter()
        .zip(log_likelihood)
        .map(|(lw, ll)| lw + ll)
        .collect();
    GridBelief::from_log_weights(b.grid, weights)
}

/// Midpoint-rule KL(a ‖ b). Cells where `a` has no mass contribute zero.
pub fn grid_kl(a: &GridBelief, b: &GridBelief) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::Shape(format!(
            "grid mismatch: {} vs {}",
            a.grid.resolution(),
            b.grid.resolution()
        )));
    }
    let area = a.grid.cell_area();
    let mut kl = 0.0;
    for (&la, &lb) in a.log_density.iter().zip(&b.log_density) {
        let pa = la.exp();
        if pa == 0.0 {
            continue;
        }
        if lb == f64::NEG_INFINITY {
            return Err(Error::Support(
                "reference density is zero where the first density is positive".into(),
            ));
        }
        kl += pa * (la - lb) * area;
    }
    Ok(kl)
}
