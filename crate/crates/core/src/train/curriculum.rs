//! Training-time probability of honouring a fired stopping test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Curriculum {
    /// Every fired stopping test is honoured.
    Vanilla,
    /// `p_stop(ℓ) = 1/(1 + exp(−a(ℓ/L − b)))`, forced to 1 for the last
    /// `lock` iterations.
    Sigmoid {
        steepness: f64,
        midpoint: f64,
        lock: usize,
    },
    /// Fixed probability; mostly for tests.
    Constant { p: f64 },
}

impl Default for Curriculum {
    fn default() -> Self {
        Curriculum::Sigmoid {
            steepness: 12.0,
            midpoint: 0.5,
            lock: 30,
        }
    }
}

impl Curriculum {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Curriculum::Vanilla => Ok(()),
            Curriculum::Sigmoid {
                steepness,
                midpoint,
                ..
            } => {
                if !(steepness.is_finite() && steepness >= 0.0 && midpoint.is_finite()) {
                    return Err(Error::Config(
                        "curriculum steepness must be >= 0 and midpoint finite".into(),
                    ));
                }
                Ok(())
            }
            Curriculum::Constant { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Config(format!("curriculum p must be in [0,1], got {p}")));
                }
                Ok(())
            }
        }
    }

    /// `p_stop` at zero-based iteration `iter` of `total`.
    pub fn p_stop(&self, iter: usize, total: usize) -> f64 {
        match *self {
            Curriculum::Vanilla => 1.0,
            Curriculum::Constant { p } => p,
            Curriculum::Sigmoid {
                steepness,
                midpoint,
                lock,
            } => {
                if iter + lock >= total {
                    return 1.0;
                }
                let frac = iter as f64 / total.max(1) as f64;
                1.0 / (1.0 + (-steepness * (frac - midpoint)).exp())
            }
        }
    }

    pub fn is_vanilla(&self) -> bool {
        matches!(self, Curriculum::Vanilla)
    }
}
