use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::sim::{SimState, System};

use super::{BarrierKind, BarrierSpec};

/// Input grid and disturbance sampling for [`feasibility_probe`].
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSettings {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Grid points per input coordinate.
    pub levels: usize,
    /// Random disturbances on the `‖δ‖ = M_δ` sphere, in addition to the
    /// coordinate extremes `±M_δ e_i` and `δ = 0`.
    pub random_disturbances: usize,
    pub seed: u64,
}

/// Searches the input box for `u` with
/// `min_δ h(F(x, u) ⊕ δ) − M_c ≥ α h(x)` over sampled `‖δ‖ ≤ M_δ`, taking the
/// constraint slack at its worst value `M_c`. `false` means no grid point
/// qualified.
pub fn feasibility_probe(
    spec: &BarrierSpec,
    system: &System,
    x: &SimState,
    m_delta: f64,
    m_c: f64,
    settings: &ProbeSettings,
) -> Result<bool> {
    if spec.kind() == BarrierKind::QuadrotorOrientation && spec.c() < 2.0 * spec.lambda_pen() {
        return Err(Error::InvalidArgument(format!(
            "C = {} is below 2λ = {}",
            spec.c(),
            2.0 * spec.lambda_pen()
        )));
    }
    let hx = spec.eval(x)?;
    // Boundary states carry round-off of order ulp(C).
    if hx < -1e-12 * spec.c().max(1.0) {
        return Err(Error::InvalidArgument(format!("state is outside the safe set (h = {hx})")));
    }
    let m = system.input_dim();
    if settings.lower.len() != m || settings.upper.len() != m {
        return Err(Error::dim("probe input box", m, settings.lower.len()));
    }
    if settings.levels == 0 {
        return Err(Error::InvalidArgument("probe grid needs at least one level".into()));
    }

    let l = system.residual_dim();
    let mut deltas = vec![vec![0.0; l]];
    for i in 0..l {
        for s in [-1.0, 1.0] {
            let mut d = vec![0.0; l];
            d[i] = s * m_delta;
            deltas.push(d);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    for _ in 0..settings.random_disturbances {
        let mut d: Vec<f64> = (0..l).map(|_| rng.sample(StandardNormal)).collect();
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        d.iter_mut().for_each(|v| *v *= m_delta / n);
        deltas.push(d);
    }

    let target = spec.alpha() * hx + m_c;
    let total = settings.levels.pow(m as u32);
    let mut u = vec![0.0; m];
    for idx in 0..total {
        let mut rest = idx;
        for j in 0..m {
            let k = rest % settings.levels;
            rest /= settings.levels;
            u[j] = if settings.levels == 1 {
                0.5 * (settings.lower[j] + settings.upper[j])
            } else {
                let t = k as f64 / (settings.levels - 1) as f64;
                settings.lower[j] + t * (settings.upper[j] - settings.lower[j])
            };
        }
        let next = system.nominal_step(x, &u)?;
        let mut ok = true;
        for d in &deltas {
            if spec.eval(&system.apply_residual(&next, d)?)? < target {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(true);
        }
    }
    Ok(false)
}
