//! Independent reference computations. Everything here is rebuilt from the raw
//! parameter matrices with plain dense algebra (LU inverses, symmetric
//! eigendecompositions) so that it shares no code path with the library's
//! factorizations.

#![allow(dead_code)]

use converse_core::linalg::{Matrix, Vector};
use converse_core::qg::{QgInstance, QgParams};
use nalgebra::SymmetricEigen;

pub fn inverse(m: &Matrix) -> Matrix {
    m.clone().try_inverse().expect("invertible")
}

/// `γ(P − γ P G (R + γ Gᵀ P G)⁻¹ Gᵀ P)` for the scaled coupling `G = p g(s)`.
pub fn metric(params: &QgParams, gp: &Matrix) -> Matrix {
    let p = params.value_form.matrix();
    let r = params.control_cost.matrix();
    let g = params.gamma;
    let b = r + gp.transpose() * p * gp * g;
    let pg = p * gp;
    (p - &pg * inverse(&b) * pg.transpose() * g) * g
}

/// `A^{x}` for a symmetric positive semidefinite `A`.
pub fn sym_pow(a: &Matrix, x: f64) -> Matrix {
    let e = SymmetricEigen::new(a.clone());
    let d = Matrix::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).powf(x)));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

pub fn quad(m: &Matrix, s: &Vector) -> f64 {
    (s.transpose() * m * s)[(0, 0)]
}

pub fn noise_offset(params: &QgParams) -> f64 {
    let tr = (params.value_form.matrix() * params.noise_cov.matrix()).trace();
    params.gamma * tr / (1.0 - params.gamma)
}

/// Optimal cost-to-go `sᵀPs + γ tr(PΣ)/(1 − γ)`.
pub fn value(params: &QgParams, s: &Vector) -> f64 {
    quad(params.value_form.matrix(), s) + noise_offset(params)
}

/// Right-hand side of the Bellman equation at `(s, a)` with the expectation
/// over `w ~ N(0, Σ)` taken analytically.
pub fn bellman_rhs(params: &QgParams, s: &Vector, next_mean: &Vector, a: &Vector) -> f64 {
    let p = params.value_form.matrix();
    let tr = (p * params.noise_cov.matrix()).trace();
    quad(params.state_cost.matrix(), s)
        + quad(params.control_cost.matrix(), a)
        + params.gamma * (quad(p, next_mean) + tr + noise_offset(params))
}

/// Relative energy and Bellman residuals at `s`, both scaled by `sᵀPs`.
pub fn identity_residuals(inst: &QgInstance, s: &Vector) -> (f64, f64) {
    let params = inst.params();
    let scale = quad(params.value_form.matrix(), s).max(f64::MIN_POSITIVE);
    let gp = inst.scaled_coupling(s);
    let f = inst.drift(s).unwrap();
    let a = inst.optimal_action(s).unwrap();
    let h = metric(params, &gp);
    let energy = quad(&(params.value_form.matrix() - params.state_cost.matrix()), s);
    let energy_res = (energy - quad(&h, &f)).abs() / scale;
    let next = &f + &gp * &a;
    let v = value(params, s);
    let bellman_res = (v - bellman_rhs(params, s, &next, &a)).abs() / v.max(scale);
    (energy_res, bellman_res)
}

pub fn rel_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(f64::MIN_POSITIVE)
}

/// Spectral radius of `H^{-1/2} E` for symmetric `H ≻ 0`, `E ⪰ 0`: it has the
/// spectrum of the symmetric `H^{-1/4} E H^{-1/4}`.
pub fn radius_of_normalized(h: &Matrix, e: &Matrix) -> f64 {
    let hq = sym_pow(h, -0.25);
    let m = &hq * e * &hq;
    let m = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(m).eigenvalues.amax()
}

/// Dominant eigenvector by power iteration.
pub fn dominant_direction(a: &Matrix, iters: usize) -> Vector {
    let n = a.nrows();
    let mut v = Vector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    for _ in 0..iters {
        v = a * &v;
        v /= v.norm();
    }
    v
}
