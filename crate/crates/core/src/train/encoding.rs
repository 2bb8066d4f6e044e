//! Network inputs: one-hot stage, zero-padded design and observation
//! histories, and (for the critic) the candidate design.

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::mdp::State;

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    horizon: usize,
    design_dim: usize,
    obs_dim: usize,
    design_scale: Vec<f64>,
    obs_scale: f64,
    centre: Vec<f64>,
    half_width: Vec<f64>,
}

impl Encoder {
    pub fn new<E: Environment + ?Sized>(env: &E) -> Result<Self> {
        let scale = env.design_scale();
        if scale.len() != env.design_dim() || scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("design_scale must be positive per coordinate".into()));
        }
        if !(env.obs_scale() > 0.0) {
            return Err(Error::Config("obs_scale must be positive".into()));
        }
        let (lo, hi) = (env.design_lo(), env.design_hi());
        Ok(Encoder {
            horizon: env.horizon(),
            design_dim: env.design_dim(),
            obs_dim: env.obs_dim(),
            design_scale: scale,
            obs_scale: env.obs_scale(),
            centre: lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            half_width: lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn design_dim(&self) -> usize {
        self.design_dim
    }

    /// `N + (N−1)(N_ξ + N_y)`.
    pub fn policy_len(&self) -> usize {
        self.horizon + (self.horizon - 1) * (self.design_dim + self.obs_dim)
    }

    pub fn q_len(&self) -> usize {
        self.policy_len() + self.design_dim
    }

    /// Offset of the candidate design inside the critic input.
    pub fn q_design_offset(&self) -> usize {
        self.policy_len()
    }

    pub fn policy_input(&self, s: &State) -> Result<Vec<f64>> {
        let k = s.stage();
        if k >= self.horizon {
            return Err(Error::Logic(format!("no decision at stage {k} of {}", self.horizon)));
        }
        let mut x = vec![0.0; self.policy_len()];
        x[k] = 1.0;
        let design_base = self.horizon;
        let obs_base = design_base + (self.horizon - 1) * self.design_dim;
        for (j, e) in s.history().iter().enumerate() {
            for (i, d) in e.design.iter().enumerate() {
                x[design_base + j * self.design_dim + i] = d / self.design_scale[i];
            }
            for (i, y) in e.observation.iter().enumerate() {
                x[obs_base + j * self.obs_dim + i] = y / self.obs_scale;
            }
        }
        Ok(x)
    }

    pub fn q_input(&self, s: &State, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.design_dim {
            return Err(Error::Shape(format!(
                "design has {} coordinates, expected {}",
                xi.len(),
                self.design_dim
            )));
        }
        let mut x = self.policy_input(s)?;
        x.extend(xi.iter().zip(&self.design_scale).map(|(d, s)| d / s));
        Ok(x)
    }

    /// Maps raw policy outputs into the design box.
    pub fn squash(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.centre.iter().zip(&self.half_width))
            .map(|(r, (c, h))| c + h * r.tanh())
            .collect()
    }

    /// Diagonal of `∂ squash / ∂ raw`.
    pub fn squash_jacobian(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.half_width)
            .map(|(r, h)| {
                let t = r.tanh();
                h * (1.0 - t * t)
            })
            .collect()
    }

    /// Converts a gradient with respect to the encoded candidate design into
    /// one with respect to the design itself.
    pub fn design_gradient(&self, q_input_grad: &[f64]) -> Vec<f64> {
        q_input_grad[self.q_design_offset()..]
            .iter()
            .zip(&self.design_scale)
            .map(|(g, s)| g / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::lingauss::{LinGaussConfig, LinGaussEnv};
    use crate::mdp::transition;

    #[test]
    fn layout_and_padding() {
        let env = LinGaussEnv::new(LinGaussConfig::with_horizon_and_cost(3, 0.0)).unwrap();
        let enc = Encoder::new(&env).unwrap();
        assert_eq!(enc.policy_len(), 3 + 2 * 2);
        assert_eq!(enc.q_len(), 8);
        let s0 = env.initial_state();
        let x0 = enc.policy_input(&s0).unwrap();
        assert_eq!(x0, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let s1 = transition(&s0, &[1.5], &[2.0], &env).unwrap();
        let x1 = enc.policy_input(&s1).unwrap();
        let ys = env.obs_scale();
        assert_eq!(x1, vec![0.0, 1.0, 0.0, 0.5, 0.0, 2.0 / ys, 0.0]);
        assert_eq!(x1.iter().take(3).filter(|v| **v != 0.0).count(), 1);
        let q = enc.q_input(&s1, &[3.0]).unwrap();
        assert_eq!(q[7], 1.0);
        let s2 = transition(&s1, &[3.0], &[-1.0], &env).unwrap();
        let s3 = transition(&s2, &[3.0], &[0.5], &env).unwrap();
        assert!(enc.policy_input(&s3).is_err());
    }

    #[test]
    fn squash_stays_in_box() {
        let env = LinGaussEnv::new(LinGaussConfig::default()).unwrap();
        let enc = Encoder::new(&env).unwrap();
        for r in [-50.0, -1.0, 0.0, 0.7, 50.0] {
            let x = enc.squash(&[r])[0];
            assert!((0.1..=3.0).contains(&x));
        }
        assert!((enc.squash(&[0.0])[0] - 1.55).abs() < 1e-12);
        let h = 1e-6;
        let fd = (enc.squash(&[0.3 + h])[0] - enc.squash(&[0.3 - h])[0]) / (2.0 * h);
        assert!((fd - enc.squash_jacobian(&[0.3])[0]).abs() < 1e-8);
    }
}
