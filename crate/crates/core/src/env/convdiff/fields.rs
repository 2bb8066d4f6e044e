//! Concentration fields for every θ-grid cell centre, and the measurement
//! and likelihood operations built on them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::solver::{interpolate, solve_forward, ConcentrationFields};
use super::ConvDiffConfig;
use crate::belief::{NoiseModel, ThetaGrid};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::rng::EpisodeRng;

const MAGIC: &[u8; 4] = b"SBFC";
const VERSION: u32 = 1;

/// The parts of [`ConvDiffConfig`] that determine the cached fields.
#[derive(Serialize)]
struct FieldKey {
    version: u32,
    fv_resolution: usize,
    dt: f64,
    substeps: usize,
    measurement_dt: f64,
    horizon: usize,
    source_width: f64,
    source_strength: f64,
    diffusivity: f64,
    velocity_slope: f64,
    theta_grid: usize,
}

/// Snapshots for all cells, stored `[cell][k][iy·n + ix]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldCache {
    key: [u8; 32],
    grid: ThetaGrid,
    n: usize,
    horizon: usize,
    data: Vec<f64>,
}

impl FieldCache {
    /// SHA-256 of the field-relevant configuration.
    pub fn key_for(cfg: &ConvDiffConfig) -> [u8; 32] {
        let plan = super::StepPlan::new(cfg).ok();
        let key = FieldKey {
            version: VERSION,
            fv_resolution: cfg.fv_resolution,
            dt: plan.map_or(f64::NAN, |p| p.dt),
            substeps: plan.map_or(0, |p| p.substeps),
            measurement_dt: cfg.measurement_dt,
            horizon: cfg.horizon,
            source_width: cfg.source_width,
            source_strength: cfg.source_strength,
            diffusivity: cfg.diffusivity,
            velocity_slope: cfg.velocity_slope,
            theta_grid: cfg.theta_grid,
        };
        let text = serde_json::to_string(&key).expect("plain struct serialises");
        let digest = Sha256::digest(text.as_bytes());
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }

    pub fn key(&self) -> [u8; 32] {
        self.key
    }

    pub fn key_hex(&self) -> String {
        self.key.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn grid(&self) -> ThetaGrid {
        self.grid
    }

    pub fn fv_resolution(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn snapshot(&self, cell: usize, k: usize) -> &[f64] {
        let m = self.n * self.n;
        let start = (cell * self.horizon + k) * m;
        &self.data[start..start + m]
    }

    fn check(&self, cell: usize, k: usize) -> Result<()> {
        if cell >= self.grid.len() {
            return Err(Error::State(format!("no cached fields for cell {cell}")));
        }
        if k >= self.horizon {
            return Err(Error::State(format!(
                "no cached snapshot {k}; horizon is {}",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Noise-free reading for source cell `cell`.
    pub fn predict(&self, cell: usize, pos: [f64; 2], k: usize) -> Result<f64> {
        self.check(cell, k)?;
        Ok(interpolate(self.snapshot(cell, k), self.n, pos).value)
    }

    /// Noise-free readings for every source cell.
    pub fn predictions(&self, pos: [f64; 2], k: usize) -> Result<Vec<f64>> {
        self.check(0, k)?;
        Ok((0..self.grid.len())
            .map(|c| interpolate(self.snapshot(c, k), self.n, pos).value)
            .collect())
    }

    /// Fields of the cell whose centre is nearest to `theta`.
    pub fn nearest(&self, theta: [f64; 2]) -> ConcentrationFields {
        let cell = self.grid.cell_of(theta);
        self.fields(cell).expect("cell_of stays on the grid")
    }

    pub fn fields(&self, cell: usize) -> Result<ConcentrationFields> {
        self.check(cell, 0)?;
        let snaps = (0..self.horizon)
            .map(|k| self.snapshot(cell, k).to_vec())
            .collect();
        ConcentrationFields::from_snapshots(self.n, snaps)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.key)?;
        for v in [self.grid.resolution(), self.n, self.horizon] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a cache file and checks it was built for `cfg`.
    pub fn load(path: &Path, cfg: &ConvDiffConfig) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a field cache file".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Format(format!("field cache version {version}, expected {VERSION}")));
        }
        let mut key = [0u8; 32];
        r.read_exact(&mut key)?;
        if key != Self::key_for(cfg) {
            return Err(Error::Format("field cache key does not match the config".into()));
        }
        let mut dims = [0usize; 3];
        let mut long = [0u8; 8];
        for d in &mut dims {
            r.read_exact(&mut long)?;
            *d = u64::from_le_bytes(long) as usize;
        }
        let [g, n, horizon] = dims;
        if g != cfg.theta_grid || n != cfg.fv_resolution || horizon != cfg.horizon {
            return Err(Error::Format(format!("field cache dims {dims:?} do not match the config")));
        }
        let len = g * g * horizon * n * n;
        let mut bytes = vec![0u8; len * 8];
        r.read_exact(&mut bytes)?;
        if r.read(&mut long)? != 0 {
            return Err(Error::Format("trailing bytes in field cache".into()));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite value in field cache".into()));
        }
        Ok(FieldCache {
            key,
            grid: ThetaGrid::new(g)?,
            n,
            horizon,
            data,
        })
    }

    /// Loads `path` if it holds a matching cache; otherwise computes the
    /// fields and writes them to `path`.
    pub fn load_or_compute(path: &Path, cfg: &ConvDiffConfig, exec: Execution) -> Result<Self> {
        match Self::load(path, cfg) {
            Ok(c) => {
                log::info!("reusing field cache {}", path.display());
                return Ok(c);
            }
            Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => log::warn!("rebuilding field cache {}: {e}", path.display()),
        }
        let cache = precompute_fields(cfg, exec)?;
        cache.save(path)?;
        Ok(cache)
    }
}

/// One forward solve per grid cell centre.
pub fn precompute_fields(cfg: &ConvDiffConfig, exec: Execution) -> Result<FieldCache> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    log::info!(
        "solving {} forward problems at resolution {}",
        grid.len(),
        cfg.fv_resolution
    );
    let per_cell = try_map_indexed(exec, grid.len(), |c| solve_forward(grid.center(c), cfg))?;
    let m = cfg.fv_resolution * cfg.fv_resolution;
    let mut data = Vec::with_capacity(grid.len() * cfg.horizon * m);
    for f in per_cell {
        for s in f.snapshots() {
            data.extend_from_slice(s);
        }
    }
    Ok(FieldCache {
        key: FieldCache::key_for(cfg),
        grid,
        n: cfg.fv_resolution,
        horizon: cfg.horizon,
        data,
    })
}

/// Bilinear reading of snapshot `k` at `pos` plus sensor noise.
/// Positions outside the domain are clamped to it and logged.
pub fn measure(
    fields: &ConcentrationFields,
    pos: [f64; 2],
    k: usize,
    noise: &NoiseModel,
    rng: &mut EpisodeRng,
) -> Result<f64> {
    let p = fields.probe(pos, k)?;
    if p.clamped {
        log::debug!("measurement position {pos:?} clamped to the domain");
    }
    let eps = Normal::new(0.0, noise.std_dev())
        .expect("validated std")
        .sample(rng);
    Ok(p.value + eps)
}

/// `log N(y; G(pos, t_k; θ_c), σ_ε²)` for every grid cell `c`.
pub fn log_likelihood_grid(
    y: f64,
    pos: [f64; 2],
    k: usize,
    cache: &FieldCache,
    noise: &NoiseModel,
) -> Result<Vec<f64>> {
    if !y.is_finite() {
        return Err(Error::Domain(format!("observation {y} is not finite")));
    }
    Ok(cache
        .predictions(pos, k)?
        .into_iter()
        .map(|g| noise.log_pdf(y - g))
        .collect())
}
