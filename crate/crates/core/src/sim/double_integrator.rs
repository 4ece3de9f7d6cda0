use rand::Rng;

use crate::gaussian::GaussianParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiParams {
    pub dt: f64,
    pub noise: bool,
}

impl Default for DiParams {
    fn default() -> Self {
        Self { dt: 0.01, noise: true }
    }
}

/// Residual distribution at position `x`: mean `[0, sin x]`, covariance
/// `½ [[2 + cos x, e^{−|x|}], [e^{−|x|}, 2 + sin x]]`.
pub fn di_true_disturbance(x: f64) -> GaussianParams {
    let e = (-x.abs()).exp();
    let cov = nalgebra::DMatrix::from_row_slice(2, 2, &[
        0.5 * (2.0 + x.cos()),
        0.5 * e,
        0.5 * e,
        0.5 * (2.0 + x.sin()),
    ]);
    GaussianParams::full(vec![0.0, x.sin()], cov).expect("symmetric by construction")
}

#[inline]
pub(crate) fn nominal(x: f64, v: f64, u: f64, dt: f64) -> (f64, f64) {
    (x + dt * v + 0.5 * dt * dt * u, v + dt * u)
}

/// `x⁺ = A x + B u + d` with `A = [[1, Δt], [0, 1]]`, `B = [½Δt², Δt]ᵀ` and
/// `d` from [`di_true_disturbance`]. Returns the next state and `d`.
pub fn di_step<R: Rng + ?Sized>(state: [f64; 2], u: f64, params: &DiParams, rng: &mut R) -> ([f64; 2], [f64; 2]) {
    let (nx, nv) = nominal(state[0], state[1], u, params.dt);
    let d = if params.noise {
        let s = di_true_disturbance(state[0]).sample(rng);
        [s[0], s[1]]
    } else {
        [0.0, 0.0]
    };
    ([nx + d[0], nv + d[1]], d)
}
