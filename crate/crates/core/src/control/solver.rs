use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest eigenvalue of `Q_c` still treated as zero.
pub const CONCAVITY_TOL: f64 = 1e-10;
pub const ROOT_TOL: f64 = 1e-8;
pub const MAX_MULTIPLIER: f64 = 1e12;

/// `min ‖u − u_nom‖²  s.t.  g(u) = uᵀQu + bᵀu + r ≥ 0` with `Q ⪯ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterProblem {
    pub u_nom: DVector<f64>,
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterSolution {
    pub u: DVector<f64>,
    /// False when `u_nom` was already feasible.
    pub active: bool,
    /// KKT multiplier `ν*`.
    pub multiplier: f64,
    /// `g(u)` at the returned input.
    pub margin: f64,
}

/// Axis-aligned input limits.
#[derive(Clone, Debug, PartialEq)]
pub struct InputBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim("input box", lower.len(), upper.len()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument("input box has lower > upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn project(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            u.len(),
            u.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(v, (l, h))| v.clamp(*l, *h)),
        )
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }
}

impl FilterProblem {
    pub fn new(u_nom: DVector<f64>, q: DMatrix<f64>, b: DVector<f64>, r: f64) -> Result<Self> {
        let m = u_nom.len();
        if q.nrows() != m || q.ncols() != m {
            return Err(Error::dim("constraint matrix", m, q.nrows()));
        }
        if b.len() != m {
            return Err(Error::dim("constraint vector", m, b.len()));
        }
        if u_nom.iter().chain(q.iter()).chain(b.iter()).any(|v| !v.is_finite()) || !r.is_finite() {
            return Err(Error::NonFinite {
                term: "filter problem".into(),
            });
        }
        let q = (&q + q.transpose()) * 0.5;
        if m > 0 {
            let top = q.clone().symmetric_eigenvalues().max();
            if top > CONCAVITY_TOL {
                return Err(Error::NotConcave { max_eigenvalue: top });
            }
        }
        Ok(Self { u_nom, q, b, r })
    }

    pub fn g(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(&self.q * u)) + self.b.dot(u) + self.r
    }

    pub fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.q * u * 2.0 + &self.b
    }

    /// `max g` over a box by cyclic coordinate ascent (exact per coordinate,
    /// convergent for concave `g`), started from the projected nominal.
    pub fn maximize_over_box(&self, bounds: &InputBox) -> DVector<f64> {
        let m = self.u_nom.len();
        let mut u = bounds.project(&self.u_nom);
        for _ in 0..500 {
            let mut moved = 0.0f64;
            for i in 0..m {
                let mut lin = self.b[i];
                for j in 0..m {
                    if j != i {
                        lin += 2.0 * self.q[(i, j)] * u[j];
                    }
                }
                let qii = self.q[(i, i)];
                let (lo, hi) = (bounds.lower[i], bounds.upper[i]);
                let best = if qii < -1e-300 {
                    (-lin / (2.0 * qii)).clamp(lo, hi)
                } else if lin > 0.0 {
                    hi
                } else if lin < 0.0 {
                    lo
                } else {
                    u[i]
                };
                moved = moved.max((best - u[i]).abs());
                u[i] = best;
            }
            if moved <= 1e-13 {
                break;
            }
        }
        u
    }
}

struct Eigen {
    vectors: DMatrix<f64>,
    values: Vec<f64>,
    u_nom: Vec<f64>,
    b: Vec<f64>,
}

impl Eigen {
    fn new(p: &FilterProblem) -> Self {
        let eig = p.q.clone().symmetric_eigen();
        let values = eig.eigenvalues.iter().map(|v| v.min(0.0)).collect();
        let vt = eig.eigenvectors.transpose();
        Self {
            u_nom: (&vt * &p.u_nom).iter().copied().collect(),
            b: (&vt * &p.b).iter().copied().collect(),
            vectors: eig.eigenvectors,
            values,
        }
    }

    /// `u(ν) = (I − νQ)⁻¹(u_nom + ν b / 2)` in the eigenbasis.
    fn coords(&self, nu: f64) -> Vec<f64> {
        (0..self.values.len())
            .map(|i| (self.u_nom[i] + 0.5 * nu * self.b[i]) / (1.0 - nu * self.values[i]))
            .collect()
    }

    fn g(&self, c: &[f64], r: f64) -> f64 {
        c.iter()
            .zip(&self.values)
            .zip(&self.b)
            .map(|((x, l), b)| l * x * x + b * x)
            .sum::<f64>()
            + r
    }

    fn to_input(&self, c: &[f64]) -> DVector<f64> {
        &self.vectors * DVector::from_column_slice(c)
    }

    /// `sup g` and a maximizer (`None` when unbounded).
    fn sup(&self, r: f64) -> (f64, Option<Vec<f64>>) {
        let scale = self.values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        let bscale = self.b.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        let mut sup = r;
        let mut arg = vec![0.0; self.values.len()];
        for i in 0..self.values.len() {
            let (l, b) = (self.values[i], self.b[i]);
            if l < -1e-14 * scale {
                arg[i] = -b / (2.0 * l);
                sup += -b * b / (4.0 * l);
            } else if b.abs() > 1e-14 * bscale {
                return (f64::INFINITY, None);
            }
        }
        (sup, Some(arg))
    }
}

/// Minimally invasive safety filter. Returns `u_nom` untouched when it is
/// already feasible; otherwise bisects on the KKT multiplier until
/// `0 ≤ g(u) ≤ 1e-8`.
pub fn solve_safety_filter(problem: &FilterProblem) -> Result<FilterSolution> {
    let g_nom = problem.g(&problem.u_nom);
    if g_nom >= 0.0 {
        return Ok(FilterSolution {
            u: problem.u_nom.clone(),
            active: false,
            multiplier: 0.0,
            margin: g_nom,
        });
    }
    let eig = Eigen::new(problem);
    let (sup, arg) = eig.sup(problem.r);
    if sup < 0.0 {
        return Err(Error::Infeasible {
            sup_g: sup,
            best_input: arg.map(|a| eig.to_input(&a).iter().copied().collect()).unwrap_or_default(),
        });
    }

    let eval = |nu: f64| {
        let c = eig.coords(nu);
        let g = eig.g(&c, problem.r);
        (c, g)
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    let (mut c_hi, mut g_hi) = eval(hi);
    while g_hi < 0.0 {
        lo = hi;
        hi *= 4.0;
        if hi > MAX_MULTIPLIER {
            let (c, g) = eval(MAX_MULTIPLIER);
            if g >= -ROOT_TOL {
                return Ok(finish(&eig, problem, c, MAX_MULTIPLIER, true));
            }
            return Err(Error::Infeasible {
                sup_g: sup,
                best_input: arg.map(|a| eig.to_input(&a).iter().copied().collect()).unwrap_or_default(),
            });
        }
        (c_hi, g_hi) = eval(hi);
    }
    for _ in 0..400 {
        if g_hi <= ROOT_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (c, g) = eval(mid);
        if g >= 0.0 {
            hi = mid;
            c_hi = c;
            g_hi = g;
        } else {
            lo = mid;
        }
    }
    Ok(finish(&eig, problem, c_hi, hi, true))
}

fn finish(eig: &Eigen, problem: &FilterProblem, coords: Vec<f64>, nu: f64, active: bool) -> FilterSolution {
    let u = eig.to_input(&coords);
    let margin = problem.g(&u);
    FilterSolution {
        u,
        active,
        multiplier: nu,
        margin,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(u_nom: &[f64], q: &[f64], b: &[f64], r: f64) -> FilterProblem {
        let m = u_nom.len();
        FilterProblem::new(
            DVector::from_column_slice(u_nom),
            DMatrix::from_row_slice(m, m, q),
            DVector::from_column_slice(b),
            r,
        )
        .unwrap()
    }

    #[test]
    fn feasible_nominal_is_returned_exactly() {
        let p = problem(&[0.1234567890123, -7.0], &[-1.0, 0.0, 0.0, -2.0], &[0.0, 0.0], 1e6);
        let s = solve_safety_filter(&p).unwrap();
        assert!(!s.active);
        assert_eq!(s.u, p.u_nom);
    }

    #[test]
    fn halfspace_projection() {
        // u ≥ 2 written as g(u) = u − 2.
        let p = problem(&[0.5], &[0.0], &[1.0], -2.0);
        let s = solve_safety_filter(&p).unwrap();
        assert!((s.u[0] - 2.0).abs() < 1e-8);
        assert!(p.g(&s.u) >= -1e-8);
    }

    #[test]
    fn convex_constraint_is_rejected() {
        let res = FilterProblem::new(
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 1e-3),
            DVector::zeros(1),
            0.0,
        );
        assert!(matches!(res, Err(Error::NotConcave { .. })));
    }

    #[test]
    fn infeasible_problem_reports_supremum() {
        // g = −u² − 1 never reaches zero; sup g = −1 at u = 0.
        let p = problem(&[3.0], &[-1.0], &[0.0], -1.0);
        match solve_safety_filter(&p) {
            Err(Error::Infeasible { sup_g, best_input }) => {
                assert!((sup_g + 1.0).abs() < 1e-12);
                assert!(best_input[0].abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ball_constraint_projects_radially() {
        // g = 1 − ‖u‖²: projection of (3, 4) is (0.6, 0.8).
        let p = problem(&[3.0, 4.0], &[-1.0, 0.0, 0.0, -1.0], &[0.0, 0.0], 1.0);
        let s = solve_safety_filter(&p).unwrap();
        assert!((s.u[0] - 0.6).abs() < 1e-8 && (s.u[1] - 0.8).abs() < 1e-8);
        let kkt = (&s.u - &p.u_nom) * 2.0 - p.gradient(&s.u) * s.multiplier;
        assert!(kkt.norm() < 1e-6);
    }

    #[test]
    fn box_maximizer_on_separable_problem() {
        let p = problem(&[0.0, 0.0], &[-1.0, 0.0, 0.0, 0.0], &[4.0, -1.0], 0.0);
        let bounds = InputBox::new(vec![-1.0, -3.0], vec![1.0, 3.0]).unwrap();
        let u = p.maximize_over_box(&bounds);
        assert_eq!(u.as_slice(), &[1.0, -3.0]);
    }
}
