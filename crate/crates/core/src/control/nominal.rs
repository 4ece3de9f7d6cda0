use nalgebra::{DMatrix, Vector3};

use crate::barrier::{dare_solve, double_integrator_model, lqr_gain};
use crate::error::{Error, Result};
use crate::sim::{QuadrotorParams, SimState};

/// State-feedback law used as `u_nom` ahead of the safety filter.
pub trait NominalController {
    fn input(&self, x: &SimState) -> Result<Vec<f64>>;
}

impl<F> NominalController for F
where
    F: Fn(&SimState) -> Result<Vec<f64>>,
{
    fn input(&self, x: &SimState) -> Result<Vec<f64>> {
        self(x)
    }
}

/// Infinite-horizon discrete LQR for the double integrator.
#[derive(Clone, Debug, PartialEq)]
pub struct LqrController {
    pub gain: [f64; 2],
    pub target: [f64; 2],
}

impl LqrController {
    pub fn new(dt: f64, q_weight: f64, r_weight: f64, target: [f64; 2]) -> Result<Self> {
        let (a, b) = double_integrator_model(dt);
        let q = DMatrix::identity(2, 2) * q_weight;
        let r = DMatrix::from_element(1, 1, r_weight);
        let p = dare_solve(&a, &b, &q, &r)?;
        let k = lqr_gain(&a, &b, &r, &p)?;
        Ok(Self {
            gain: [k[(0, 0)], k[(0, 1)]],
            target,
        })
    }
}

impl NominalController for LqrController {
    fn input(&self, x: &SimState) -> Result<Vec<f64>> {
        match x {
            SimState::DoubleIntegrator { x, v } => Ok(vec![
                -self.gain[0] * (x - self.target[0]) - self.gain[1] * (v - self.target[1]),
            ]),
            _ => Err(Error::InvalidArgument("LQR expects a double-integrator state".into())),
        }
    }
}

/// Geometric position controller: PD on position gives a desired
/// acceleration; thrust is its projection on the body z-axis and the angular
/// rate turns the body z-axis toward it.
#[derive(Clone, Debug, PartialEq)]
pub struct Se3Controller {
    pub params: QuadrotorParams,
    pub target: Vector3<f64>,
    pub kp: f64,
    pub kd: f64,
    pub k_att: f64,
}

impl Se3Controller {
    pub fn new(params: QuadrotorParams, target: Vector3<f64>) -> Self {
        Self {
            params,
            target,
            kp: 4.0,
            kd: 4.0,
            k_att: 10.0,
        }
    }
}

impl NominalController for Se3Controller {
    fn input(&self, x: &SimState) -> Result<Vec<f64>> {
        let s = x.as_quadrotor()?;
        let acc = (self.target - s.p) * self.kp - s.v * self.kd + Vector3::new(0.0, 0.0, self.params.gravity);
        let b3 = s.thrust_axis();
        let thrust = (self.params.mass * acc.dot(&b3)).max(0.0);
        let omega = match acc.try_normalize(1e-9) {
            Some(b3_des) => b3.cross(&b3_des) * self.k_att,
            None => Vector3::zeros(),
        };
        Ok(vec![thrust, omega.x, omega.y, omega.z])
    }
}
