//! Position bounds `w-_i <= w_i <= w+_i` on top of the long-short weights.
//!
//! For a scale `x = 1/kappa` the bounded problem is
//! `max x E^.w - w.C.w / 2` subject to the bounds and `G^T w = 0`; `x` is then
//! picked so that `sum |w_i| = 1`. Coordinates are clipped to their bounds
//! and the rest re-optimized until the fixed set is stable; a fixed
//! coordinate whose gradient points back inside is released again. When
//! that path cannot meet the unit budget, the scale is instead found by
//! bisection on the fixed-scale bounded solution.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::risk::{constrained_solve_many, ConstrainedSolution, ConstraintSet, RiskModel};

#[derive(Debug, Clone, PartialEq)]
pub struct PositionBounds {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl PositionBounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        linalg::check_len(&upper, lower.len())?;
        for i in 0..lower.len() {
            if !(lower[i] < 0.0 && upper[i] > 0.0) {
                return Err(Error::invalid(format!(
                    "bounds for instrument {i} must straddle zero, got [{}, {}]",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `|w_i| <= cap_i`.
    pub fn symmetric(cap: DVector<f64>) -> Result<Self> {
        Self::new(-&cap, cap)
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, w: &DVector<f64>, slack: f64) -> bool {
        (0..w.len()).all(|i| w[i] >= self.lower[i] - slack && w[i] <= self.upper[i] + slack)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundedSolution {
    #[serde(serialize_with = "crate::serde_util::dvector")]
    pub weights: DVector<f64>,
    pub at_lower: Vec<usize>,
    pub at_upper: Vec<usize>,
    /// `x = 1/kappa`.
    pub scale: f64,
    pub iterations: usize,
    /// Largest violation of stationarity on free coordinates or of the
    /// multiplier sign on fixed ones, relative to `max |x E^|`.
    pub kkt_residual: f64,
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Side {
    Free,
    Lower,
    Upper,
}

struct Problem<'a> {
    e_hat: &'a DVector<f64>,
    model: &'a dyn RiskModel,
    bounds: &'a PositionBounds,
    g: &'a DMatrix<f64>,
    /// Free-set `u` at or below this gross size is roundoff and treated as 0.
    u_floor: f64,
}

/// Below this fraction of the unbounded solution, the scale-proportional part
/// of the free-set solution is roundoff, as when the constraints fix every
/// free coordinate.
const U_ROUNDOFF: f64 = 1e-11;

/// Free-set solution `w_F = x u + v` for a fixed assignment of sides.
struct Split {
    free: Vec<usize>,
    w_fixed: DVector<f64>,
    u: ConstrainedSolution,
    v: ConstrainedSolution,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.e_hat.len()
    }

    fn split(&self, side: &[Side]) -> Result<Split> {
        let n = self.n();
        let free: Vec<usize> = (0..n).filter(|&i| side[i] == Side::Free).collect();
        if free.is_empty() {
            return Err(Error::Infeasible("every coordinate is pinned at a bound".into()));
        }
        let mut w_fixed = DVector::zeros(n);
        for i in 0..n {
            match side[i] {
                Side::Lower => w_fixed[i] = self.bounds.lower[i],
                Side::Upper => w_fixed[i] = self.bounds.upper[i],
                Side::Free => {}
            }
        }
        let m = self.g.ncols();
        let g_free = self.g.select_rows(free.iter());
        let mut r = DMatrix::zeros(free.len(), 2);
        r.set_column(0, &linalg::gather(self.e_hat, &free));
        r.set_column(1, &-linalg::gather(&self.model.apply(&w_fixed), &free));
        let mut c = DMatrix::zeros(m, 2);
        c.set_column(1, &-(self.g.transpose() * &w_fixed));
        let mut both = constrained_solve_many(self.model, &free, &g_free, &r, &c)?;
        let v = both.pop().expect("two right-hand sides");
        let mut u = both.pop().expect("two right-hand sides");
        if linalg::l1_norm(&u.w) <= self.u_floor {
            u.w.fill(0.0);
            u.mu.fill(0.0);
        }
        Ok(Split { free, w_fixed, u, v })
    }

    fn assemble(&self, sp: &Split, x: f64) -> (DVector<f64>, DVector<f64>) {
        let w_free = &sp.u.w * x + &sp.v.w;
        let mut w = sp.w_fixed.clone();
        for (p, &i) in sp.free.iter().enumerate() {
            w[i] = w_free[p];
        }
        (w, &sp.u.mu * x + &sp.v.mu)
    }

    /// Pins free coordinates outside their bounds. Returns the number pinned
    /// and the worst one.
    fn clip(&self, side: &mut [Side], w: &DVector<f64>) -> (usize, Option<(usize, Side)>) {
        let b = self.bounds;
        let mut clipped = 0;
        let mut worst = (0.0, None);
        for i in 0..self.n() {
            if side[i] != Side::Free {
                continue;
            }
            let (excess, at) = if w[i] > b.upper[i] * (1.0 + 1e-12) {
                (w[i] / b.upper[i], Side::Upper)
            } else if w[i] < b.lower[i] * (1.0 + 1e-12) {
                (w[i] / b.lower[i], Side::Lower)
            } else {
                continue;
            };
            side[i] = at;
            clipped += 1;
            if excess > worst.0 {
                worst = (excess, Some((i, at)));
            }
        }
        (clipped, worst.1)
    }

    /// Frees pinned coordinates whose multiplier has the wrong sign. Returns
    /// whether any was freed and the relative KKT residual.
    fn release(&self, side: &mut [Side], w: &DVector<f64>, mu: &DVector<f64>, x: f64) -> (bool, f64) {
        let grad = self.e_hat * x - self.model.apply(w) - self.g * mu;
        let scale = (self.e_hat * x).amax().max(f64::MIN_POSITIVE);
        let tol = 1e-9 * scale;
        let mut released = false;
        let mut residual: f64 = 0.0;
        for i in 0..self.n() {
            let viol = match side[i] {
                Side::Free => grad[i].abs(),
                Side::Upper => (-grad[i]).max(0.0),
                Side::Lower => grad[i].max(0.0),
            };
            if side[i] != Side::Free && viol > tol {
                side[i] = Side::Free;
                released = true;
            }
            residual = residual.max(viol);
        }
        (released, residual / scale)
    }

    fn finish(&self, side: &[Side], w: DVector<f64>, x: f64, iterations: usize, kkt: f64) -> BoundedSolution {
        BoundedSolution {
            weights: w,
            at_lower: (0..self.n()).filter(|&i| side[i] == Side::Lower).collect(),
            at_upper: (0..self.n()).filter(|&i| side[i] == Side::Upper).collect(),
            scale: x,
            iterations,
            kkt_residual: kkt,
        }
    }

    /// Clip-and-rescale: the scale is re-fitted to the unit budget after every
    /// change of the pinned set.
    fn clip_and_scale(&self, cap: usize) -> Result<BoundedSolution> {
        let n = self.n();
        let mut side = vec![Side::Free; n];
        // state before the last multi-coordinate clip and its worst violator
        let mut undo: Option<(Vec<Side>, usize, Side)> = None;
        for iter in 1..=cap {
            let sp = self.split(&side)?;
            let x = match l1_scale(&sp.u.w, &sp.v.w, 1.0 - linalg::l1_norm(&sp.w_fixed)) {
                Ok(x) => x,
                Err(Error::Infeasible(_)) if undo.is_some() => {
                    // clipping everything at once overshot; pin only the worst one
                    let (prev, worst, at) = undo.take().expect("checked above");
                    side = prev;
                    side[worst] = at;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let (w, mu) = self.assemble(&sp, x);
            let before = side.clone();
            let (clipped, worst) = self.clip(&mut side, &w);
            if clipped > 0 {
                undo = (clipped > 1).then(|| (before, worst.expect("something was clipped").0, worst.unwrap().1));
                continue;
            }
            undo = None;
            let (released, kkt) = self.release(&mut side, &w, &mu, x);
            if !released {
                return Ok(self.finish(&side, w, x, iter, kkt));
            }
        }
        Err(Error::NonConvergence(format!("bounded active set did not settle within {cap} passes")))
    }

    /// Bounded solution at a fixed scale, warm-started from `side`.
    fn solve_at(&self, x: f64, side: &mut [Side], cap: usize) -> Result<(DVector<f64>, f64, usize)> {
        for iter in 1..=cap {
            let sp = self.split(side)?;
            let (w, mu) = self.assemble(&sp, x);
            if self.clip(side, &w).0 > 0 {
                continue;
            }
            let (released, kkt) = self.release(side, &w, &mu, x);
            if !released {
                return Ok((w, kkt, iter));
            }
        }
        Err(Error::NonConvergence(format!("bounded active set at fixed scale did not settle within {cap} passes")))
    }

    /// Brackets and bisects the scale so that the fixed-scale solution has
    /// unit gross exposure. Slower than [`Self::clip_and_scale`] but only
    /// needs the gross exposure to be continuous in the scale.
    fn scale_search(&self, cap: usize) -> Result<BoundedSolution> {
        let n = self.n();
        let mut side = vec![Side::Free; n];
        let mut passes = 0;
        let unbounded = self.split(&side)?;
        let mut hi = 1.0 / linalg::l1_norm(&unbounded.u.w).max(f64::MIN_POSITIVE);
        let mut lo = 0.0;
        let mut best;
        loop {
            let (w, kkt, it) = self.solve_at(hi, &mut side, cap)?;
            passes += it;
            let gross = linalg::l1_norm(&w);
            best = (w, kkt, side.clone(), hi);
            if gross >= 1.0 {
                break;
            }
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() || hi > 1e300 {
                return Err(Error::Infeasible("position bounds cannot absorb a unit gross exposure".into()));
            }
        }
        for _ in 0..200 {
            if (linalg::l1_norm(&best.0) - 1.0).abs() <= 1e-14 || hi - lo <= 1e-15 * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let mut s = best.2.clone();
            let (w, kkt, it) = self.solve_at(mid, &mut s, cap)?;
            passes += it;
            if linalg::l1_norm(&w) >= 1.0 {
                hi = mid;
                best = (w, kkt, s, mid);
            } else {
                lo = mid;
            }
        }
        let (w, kkt, side, x) = best;
        // the exact budget fit for the final pinned set, when it stays inside
        let sp = self.split(&side)?;
        if let Ok(xe) = l1_scale(&sp.u.w, &sp.v.w, 1.0 - linalg::l1_norm(&sp.w_fixed)) {
            let (we, mu) = self.assemble(&sp, xe);
            let mut probe = side.clone();
            if self.clip(&mut probe, &we).0 == 0 {
                let (released, kkt) = self.release(&mut probe, &we, &mu, xe);
                if !released {
                    return Ok(self.finish(&side, we, xe, passes, kkt));
                }
            }
        }
        // shrinking toward zero keeps the bounds and the homogeneous constraints
        let gross = linalg::l1_norm(&w);
        Ok(self.finish(&side, w / gross, x / gross, passes, kkt))
    }
}

pub fn apply_position_bounds(
    e_hat: &DVector<f64>,
    model: &dyn RiskModel,
    bounds: &PositionBounds,
    constraints: Option<&ConstraintSet>,
) -> Result<BoundedSolution> {
    let n = model.dim();
    linalg::check_len(e_hat, n)?;
    linalg::check_len(bounds.lower(), n)?;
    let empty = ConstraintSet::empty(n);
    let cons = constraints.unwrap_or(&empty);
    if cons.n() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: cons.n() });
    }
    let mut problem = Problem { e_hat, model, bounds, g: cons.matrix(), u_floor: 0.0 };
    let unbounded = problem.split(&vec![Side::Free; n])?;
    problem.u_floor = U_ROUNDOFF * linalg::l1_norm(&unbounded.u.w);
    let cap = 3 * n + 3;
    match problem.clip_and_scale(cap) {
        Ok(sol) => Ok(sol),
        Err(Error::Infeasible(_) | Error::NonConvergence(_) | Error::Degenerate(_)) => problem.scale_search(cap),
        Err(e) => Err(e),
    }
}

/// Smallest `x >= 0` on the non-decreasing branch of the convex function
/// `g(x) = sum |x u_i + v_i|` with `g(x) = target`.
fn l1_scale(u: &DVector<f64>, v: &DVector<f64>, target: f64) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::Infeasible("positions pinned at bounds exhaust the unit budget".into()));
    }
    let g = |x: f64| -> f64 { u.iter().zip(v.iter()).map(|(a, b)| (x * a + b).abs()).sum() };
    let mut knots: Vec<f64> = u
        .iter()
        .zip(v.iter())
        .filter(|(a, _)| **a != 0.0)
        .map(|(a, b)| -b / a)
        .filter(|x| *x > 0.0)
        .collect();
    knots.push(0.0);
    knots.sort_by(|a, b| a.total_cmp(b));
    knots.dedup();

    // the minimum of a convex piecewise-linear function sits at a knot
    let (start, gmin) = knots
        .iter()
        .enumerate()
        .map(|(k, &x)| (k, g(x)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("knots contain zero");
    if gmin > target * (1.0 + 1e-12) {
        return Err(Error::Infeasible(format!(
            "cannot reach unit gross exposure: minimum over the free set is {gmin:.6e} > {target:.6e}"
        )));
    }
    let (mut x0, mut g0) = (knots[start], gmin);
    for &x1 in &knots[start + 1..] {
        let g1 = g(x1);
        if g1 >= target {
            return Ok(if g1 > g0 { x0 + (target - g0) * (x1 - x0) / (g1 - g0) } else { x0 });
        }
        x0 = x1;
        g0 = g1;
    }
    let slope = linalg::l1_norm(u);
    if slope == 0.0 {
        return Err(Error::Degenerate("expected returns vanish on the free set".into()));
    }
    Ok(x0 + (target - g0) / slope)
}
