use rand::Rng;

use crate::barrier::exit_prob_bound;
use crate::error::{Error, Result};

/// Scalar walk `x⁺ = αx + w` with `w = ±(1 − α)M` equally likely and barrier
/// `h(x) = x`. It satisfies `E[h(x⁺)] = αh(x)` exactly and `h ≤ M` on
/// `[0, M]`, so the exit-probability bound applies with zero slack.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KushnerWalk {
    pub alpha: f64,
    pub upper: f64,
}

impl KushnerWalk {
    pub fn new(alpha: f64, upper: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) || !(upper > 0.0) {
            return Err(Error::InvalidArgument(
                "need α in (0, 1) and a positive upper bound".into(),
            ));
        }
        Ok(Self { alpha, upper })
    }

    pub fn step<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let w = (1.0 - self.alpha) * self.upper;
        self.alpha * x + if rng.random_bool(0.5) { w } else { -w }
    }

    /// True if `h` drops below zero within `horizon` steps.
    pub fn exits<R: Rng + ?Sized>(&self, x0: f64, horizon: usize, rng: &mut R) -> bool {
        let mut x = x0;
        if x < 0.0 {
            return true;
        }
        for _ in 0..horizon {
            x = self.step(x, rng);
            if x < 0.0 {
                return true;
            }
        }
        false
    }

    pub fn bound(&self, x0: f64, horizon: usize) -> Result<f64> {
        exit_prob_bound(x0, self.upper, self.alpha, horizon)
    }
}
