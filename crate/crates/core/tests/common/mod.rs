//! Independent oracles for integration and acceptance tests. They work on
//! dense matrices with explicit inverses and never call the optimizers.

#![allow(dead_code)]

use fanopt_core::risk::FactorModel;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `A A^T / n + diag(0.1..1.1)`.
pub fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let mut c = &a * a.transpose() / n as f64;
    for i in 0..n {
        c[(i, i)] += rng.random_range(0.1..1.1);
    }
    c
}

pub fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_factor_model(n: usize, k: usize, rng: &mut ChaCha8Rng) -> FactorModel {
    let xi2 = DVector::from_fn(n, |_, _| rng.random_range(0.2..1.5));
    let omega = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
    let b = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    let mut phi = &b * b.transpose();
    for a in 0..k {
        phi[(a, a)] += 0.5;
    }
    FactorModel::new(xi2, omega, phi).unwrap()
}

/// `xi^2 + Omega phi Omega^T` assembled by hand.
pub fn dense_factor(m: &FactorModel) -> DMatrix<f64> {
    let mut c = m.loadings() * m.factor_cov() * m.loadings().transpose();
    for i in 0..m.xi2().len() {
        c[(i, i)] += m.xi2()[i];
    }
    c
}

/// `(alpha^2, beta^2, gamma)` from an explicit inverse.
pub fn invariants(c: &DMatrix<f64>, e: &DVector<f64>) -> (f64, f64, f64) {
    let inv = c.clone().try_inverse().unwrap();
    let nu = DVector::from_element(e.len(), 1.0);
    (e.dot(&(&inv * e)), nu.dot(&(&inv * &nu)), e.dot(&(&inv * &nu)))
}

/// Largest `E/V` over the budget plane `sum w = 1` restricted to the family
/// `w = a C^{-1} E + b C^{-1} nu`, by a direction grid plus golden refinement.
pub fn grid_fano(alpha2: f64, beta2: f64, gamma: f64, points: usize) -> f64 {
    let ratio = |theta: f64| -> f64 {
        let (da, db) = (theta.cos(), theta.sin());
        let s = da * gamma + db * beta2;
        if s.abs() < 1e-12 {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (da / s, db / s);
        let e = a * alpha2 + b * gamma;
        let v = a * a * alpha2 + 2.0 * a * b * gamma + b * b * beta2;
        e / v
    };
    let step = std::f64::consts::PI / points as f64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..points {
        let th = k as f64 * step;
        let r = ratio(th);
        if r > best.0 {
            best = (r, th);
        }
    }
    let (mut lo, mut hi) = (best.1 - step, best.1 + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if ratio(m1) < ratio(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    best.0.max(ratio(0.5 * (lo + hi)))
}

/// Unconstrained Fano weights on a subset, scattered back to full length.
pub fn subset_fano(c: &DMatrix<f64>, e: &DVector<f64>, subset: &[usize]) -> DVector<f64> {
    let cs = DMatrix::from_fn(subset.len(), subset.len(), |p, q| c[(subset[p], subset[q])]);
    let es = DVector::from_fn(subset.len(), |p, _| e[subset[p]]);
    let inv = cs.try_inverse().unwrap();
    let nu = DVector::from_element(subset.len(), 1.0);
    let (ce, cn) = (&inv * &es, &inv * &nu);
    let (alpha, beta, gamma) = (es.dot(&ce).sqrt(), nu.dot(&cn).sqrt(), es.dot(&cn));
    let lambda = alpha * beta + gamma;
    let ws = (ce + cn * (alpha / beta)) / lambda;
    let mut w = DVector::zeros(e.len());
    for (p, &i) in subset.iter().enumerate() {
        w[i] = ws[p];
    }
    w
}

/// Best `E/V` over the simplex by enumerating every support and keeping the
/// feasible stationary points. Exact for `N` up to about 12.
pub fn exhaustive_long_only_fano(c: &DMatrix<f64>, e: &DVector<f64>) -> f64 {
    let n = e.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 1u32..(1 << n) {
        let subset: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let w = subset_fano(c, e, &subset);
        if w.iter().all(|x| *x >= -1e-12) {
            let f = e.dot(&w) / w.dot(&(c * &w));
            best = best.max(f);
        }
    }
    best
}

pub fn angle(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos()
}

/// `alpha^2 beta^2 / (alpha^2 beta^2 - gamma^2)`: how close E is to the
/// budget direction, and the factor by which roundoff in the closed forms
/// is amplified.
pub fn budget_condition(a2: f64, b2: f64, g: f64) -> f64 {
    a2 * b2 / (a2 * b2 - g * g)
}

/// Relative tolerance: 1e-8 for ordinary instances, growing with the
/// conditioning once that exceeds 1e4.
pub fn conditioned_tol(a2: f64, b2: f64, g: f64) -> f64 {
    1e-12 * budget_condition(a2, b2, g).max(1e4)
}
