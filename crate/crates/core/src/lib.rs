//! Mixture regularization (mixreg) for reinforcement-learning generalization.
//!
//! The crate trains PPO and a distributional Rainbow-style Q-learner on
//! procedurally generated grid games, optionally on convex combinations of
//! observations from different levels with identically interpolated
//! supervision signals, and ships the diagnostics used to study the effect:
//! zero-shot test returns, generalization gaps, empirical Lipschitz ratios and
//! value surfaces over the convex hull of observations.

pub mod analysis;
pub mod env;
pub mod error;
pub mod harness;
pub mod eval;
pub mod mix;
pub mod nn;
pub mod ppo;
pub mod rainbow;
pub mod rng;
pub mod rollout;

pub use error::{Error, Result};
