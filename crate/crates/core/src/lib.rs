//! Sequential Bayesian experimental design with learned stopping.
//!
//! A campaign is a belief-state MDP: at each stage the agent either stops,
//! collecting the information gained so far, or runs one more experiment at a
//! chosen design. Design and stopping policies are trained jointly with an
//! actor-critic policy gradient; see [`train`].

pub mod belief;
pub mod env;
pub mod error;
pub mod exec;
pub mod mdp;
pub mod nn;
pub mod quadrature;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
