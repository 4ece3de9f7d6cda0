//! Learned residual distributions for risk-aware safety filtering.
//!
//! A conditional VAE ([`cvae`]) learns the state-dependent distribution of
//! dynamics residuals; its closed-form mixture moments feed a discrete-time
//! barrier-function safety filter ([`control`]) whose exit probability over a
//! finite horizon is bounded ([`barrier::exit_prob_bound`]). [`sim`] provides
//! the ground-truth systems and [`experiments`] the config-driven harness.

pub mod barrier;
pub mod control;
pub mod cvae;
pub mod error;
pub mod experiments;
pub mod gaussian;
pub mod nn;
pub mod sim;

pub use error::{Error, Result};
