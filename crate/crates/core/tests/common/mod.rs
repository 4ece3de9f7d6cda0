#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use orio::control::FilterProblem;
use rand::Rng;

/// Random single-constraint instance with `Q ≺ 0`, dimension `m`. The
/// constant is drawn so that roughly half of the nominals are feasible.
pub fn random_problem<R: Rng>(rng: &mut R, m: usize) -> FilterProblem {
    let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
    let eps = if rng.random_bool(0.2) { 1e-3 } else { 0.2 };
    let q = -(&a * a.transpose()) - DMatrix::identity(m, m) * eps;
    let b = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
    let u_nom = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
    let peak = peak(&q, &b);
    let g_peak = g(&q, &b, 0.0, &peak);
    let g_nom = g(&q, &b, 0.0, &u_nom);
    // Place the zero level between the nominal and the peak value.
    let level = g_nom + rng.random_range(-0.5..1.0) * (g_peak - g_nom);
    FilterProblem::new(u_nom, q, b, -level).unwrap()
}

fn g(q: &DMatrix<f64>, b: &DVector<f64>, r: f64, u: &DVector<f64>) -> f64 {
    u.dot(&(q * u)) + b.dot(u) + r
}

/// `argmax g = −Q⁻¹b/2` by LU.
fn peak(q: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    q.clone().lu().solve(&(-b * 0.5)).expect("Q is negative definite")
}

/// Unit vector from hyperspherical angles (`m − 1` of them).
fn direction(angles: &[f64]) -> DVector<f64> {
    let m = angles.len() + 1;
    let mut w = DVector::zeros(m);
    let mut sin_prod = 1.0;
    for (i, a) in angles.iter().enumerate() {
        w[i] = sin_prod * a.cos();
        sin_prod *= a.sin();
    }
    w[m - 1] = sin_prod;
    w
}

/// Boundary point on the ray `peak + t·w`, `t ≥ 0`. Along the ray `g` is a
/// concave quadratic `a t² + g(peak)` (the linear term vanishes at the peak).
fn boundary_point(p: &FilterProblem, top: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let a = w.dot(&(&p.q * w));
    let t = (p.g(top) / -a).max(0.0).sqrt();
    top + w * t
}

/// Projection of `u_nom` onto `{g ≥ 0}`. For an infeasible nominal the
/// projection lies on the boundary, which is star-shaped around the peak,
/// so the search runs over ray directions with a shrinking grid of angles.
pub fn grid_search(p: &FilterProblem) -> DVector<f64> {
    if p.g(&p.u_nom) >= 0.0 {
        return p.u_nom.clone();
    }
    let m = p.u_nom.len();
    let top = peak(&p.q, &p.b);
    let dist = |angles: &[f64]| (boundary_point(p, &top, &direction(angles)) - &p.u_nom).norm_squared();
    if m == 1 {
        let a = boundary_point(p, &top, &DVector::from_element(1, 1.0));
        let b = boundary_point(p, &top, &DVector::from_element(1, -1.0));
        return if (&a - &p.u_nom).norm() <= (&b - &p.u_nom).norm() { a } else { b };
    }
    let levels: usize = match m {
        2 => 61,
        3 => 21,
        _ => 11,
    };
    let k = m - 1;
    // Start from the direction pointing at the nominal.
    let to_nom = (&p.u_nom - &top).normalize();
    let mut centre = vec![0.0; k];
    let mut rest = 1.0f64;
    for i in 0..k {
        let c = (to_nom[i] / rest.max(1e-300)).clamp(-1.0, 1.0);
        centre[i] = c.acos();
        rest *= centre[i].sin();
    }
    if to_nom[m - 1] < 0.0 {
        centre[k - 1] = -centre[k - 1];
    }
    let mut best_d = dist(&centre);
    let mut half = std::f64::consts::PI;
    let mut a = vec![0.0; k];
    while half > 1e-13 {
        let before = best_d;
        let mut best = centre.clone();
        for idx in 0..levels.pow(k as u32) {
            let mut r = idx;
            for i in 0..k {
                let t = (r % levels) as f64 / (levels - 1) as f64;
                r /= levels;
                a[i] = centre[i] - half + 2.0 * half * t;
            }
            let d = dist(&a);
            if d < best_d {
                best_d = d;
                best.copy_from_slice(&a);
            }
        }
        centre = best;
        if best_d >= before {
            half *= 0.5;
        }
    }
    boundary_point(p, &top, &direction(&centre))
}
