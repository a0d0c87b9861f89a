//! Inexact solvers for the local block subproblems of the nonlinear
//! Gauss--Seidel smoother.
//!
//! The local problem at block `k` with current iterate `w` reads
//! `min_v f0(v) + psi(v)` with `f0(v) = J0(w + P_k v)` (normalized to
//! `f0(0) = 0`) and `psi(v) = phi_k(w_k + v)`. Solvers here either minimize
//! exactly (scalar bisection, interval quadratics, edge sweeps) or minimize a
//! dominating first-order model exactly, which suffices for global
//! convergence of the outer iteration.

use crate::error::{Error, Result};
use crate::functional::{Energy, SmoothPart};
use crate::matrix::DenseBlock;
use crate::nonsmooth::{simplex_project, Interval, NonsmoothTerm};

/// Hard cap for bisection; tolerance misses are flagged, not fatal.
const BISECT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy)]
pub struct BisectOutcome {
    pub t: f64,
    /// False when the iteration cap was hit before the interval shrank to
    /// the requested tolerance.
    pub converged: bool,
}

/// Minimize a convex scalar function on `[a, b]` by bisecting on the sign of
/// its right derivative.
///
/// The returned point satisfies `g(t) <= min(g(a), g(b))` up to machine
/// slack; when the derivative never changes sign the better endpoint is
/// returned. Tolerance is `tol * (1 + |a| + |b|)` on the bracket width.
pub fn bisect_scalar(
    value: impl Fn(f64) -> f64,
    right_deriv: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<BisectOutcome> {
    if !(a <= b) {
        return Err(Error::usage(format!(
            "bisect_scalar: invalid bracket [{a}, {b}]"
        )));
    }
    if a == b {
        return Ok(BisectOutcome {
            t: a,
            converged: true,
        });
    }
    let width_tol = tol * (1.0 + a.abs() + b.abs());
    let mut lo = a;
    let mut hi = b;
    let mut converged = false;
    for _ in 0..BISECT_MAX_ITER {
        if hi - lo <= width_tol {
            converged = true;
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            converged = true;
            break;
        }
        let d = right_deriv(mid);
        if d.is_nan() {
            return Err(Error::numeric("bisect_scalar: NaN derivative"));
        }
        if d > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    // Guarantee non-increase versus both endpoints.
    let mut best = mid;
    let mut best_val = value(mid);
    for cand in [a, b] {
        let v = value(cand);
        if v < best_val {
            best_val = v;
            best = cand;
        }
    }
    if best_val.is_nan() {
        return Err(Error::numeric("bisect_scalar: NaN value"));
    }
    Ok(BisectOutcome { t: best, converged })
}

/// Exact minimizer of `1/2 a t^2 - b t` over the interval `k`: the clamp of
/// `b / a`. Requires positive curvature.
pub fn exact_interval_quadratic(a: f64, b: f64, k: &Interval) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::usage(format!(
            "exact_interval_quadratic: curvature {a} is not positive"
        )));
    }
    Ok(k.clamp(b / a))
}

/// One-dimensional search directions aligned with the edges of the
/// polyhedral partition of `dom phi_k`: canonical axes for boxes, the edge
/// vectors `e_i - e_j` for the simplex, nothing for norm terms (which use
/// the model solver instead).
pub fn polyhedral_gs_directions(term: &NonsmoothTerm, _x: &[f64]) -> Vec<Vec<f64>> {
    match term {
        NonsmoothTerm::Interval(_) => vec![vec![1.0]],
        NonsmoothTerm::Box(ivs) => axes(ivs.len()),
        NonsmoothTerm::SmoothSingularSum(fs) => axes(fs.len()),
        NonsmoothTerm::Simplex(l) => {
            let mut dirs = Vec::with_capacity(l * (l - 1) / 2);
            for i in 0..*l {
                for j in (i + 1)..*l {
                    let mut d = vec![0.0; *l];
                    d[i] = 1.0;
                    d[j] = -1.0;
                    dirs.push(d);
                }
            }
            dirs
        }
        NonsmoothTerm::WeightedNorm(_) => Vec::new(),
    }
}

fn axes(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut d = vec![0.0; n];
            d[i] = 1.0;
            d
        })
        .collect()
}

/// Nonsmooth term shifted to displacement coordinates:
/// `psi(v) = phi(base + v)`.
#[derive(Debug, Clone)]
pub struct ShiftedTerm {
    pub term: NonsmoothTerm,
    pub base: Vec<f64>,
}

impl ShiftedTerm {
    pub fn value(&self, v: &[f64]) -> Energy {
        let shifted: Vec<f64> = self.base.iter().zip(v).map(|(b, vi)| b + vi).collect();
        self.term.value(&shifted)
    }
}

/// Quadratic upper model for the smooth part of a local problem.
#[derive(Debug, Clone)]
pub enum ModelCurvature {
    ScaledIdentity(f64),
    Dense(DenseBlock),
}

impl ModelCurvature {
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            ModelCurvature::ScaledIdentity(alpha) => {
                alpha * x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
            }
            ModelCurvature::Dense(b) => b.bilinear(x, y),
        }
    }

    fn diag(&self, i: usize) -> f64 {
        match self {
            ModelCurvature::ScaledIdentity(alpha) => *alpha,
            ModelCurvature::Dense(b) => b.get(i, i),
        }
    }

    fn row_dot(&self, i: usize, v: &[f64]) -> f64 {
        match self {
            ModelCurvature::ScaledIdentity(alpha) => alpha * v[i],
            ModelCurvature::Dense(b) => (0..v.len()).map(|j| b.get(i, j) * v[j]).sum(),
        }
    }
}

/// First-order model `M(v) = c + <g, v> + 1/2 <B v, v> + psi(v)`.
///
/// `M` matches the local functional's value and smooth gradient at zero; if
/// `B` dominates the curvature of the smooth part, minimizing `M` exactly
/// never increases the true energy.
#[derive(Debug, Clone)]
pub struct FirstOrderModel {
    pub constant: f64,
    /// Smooth gradient `f0'(0)`.
    pub gradient: Vec<f64>,
    pub curvature: ModelCurvature,
    pub psi: ShiftedTerm,
}

impl FirstOrderModel {
    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn value(&self, v: &[f64]) -> Energy {
        let lin: f64 = self.gradient.iter().zip(v).map(|(g, vi)| g * vi).sum();
        let quad = 0.5 * self.curvature.bilinear(v, v);
        self.psi
            .value(v)
            .plus(Energy::Finite(self.constant + lin + quad))
    }
}

/// Local problem in displacement coordinates, normalized to `f0(0) = 0`.
pub struct LocalProblem<F: Fn(&[f64]) -> f64> {
    /// `f0(v) = J0(w + P v) - J0(w)`.
    pub smooth_value: F,
    /// `f0'(0)`.
    pub gradient: Vec<f64>,
    /// Optional curvature bound for the dominating model.
    pub curvature: Option<DenseBlock>,
    pub psi: ShiftedTerm,
}

impl<F: Fn(&[f64]) -> f64> LocalProblem<F> {
    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn value(&self, v: &[f64]) -> Energy {
        self.psi
            .value(v)
            .plus(Energy::Finite((self.smooth_value)(v)))
    }

    /// Dominating model built from the stored curvature bound.
    pub fn dominating_model(&self) -> Result<FirstOrderModel> {
        let b = self
            .curvature
            .as_ref()
            .ok_or_else(|| Error::usage("local problem carries no curvature bound"))?;
        Ok(FirstOrderModel {
            constant: 0.0,
            gradient: self.gradient.clone(),
            curvature: ModelCurvature::Dense(b.clone()),
            psi: self.psi.clone(),
        })
    }
}

/// Exact minimizer of a dominating first-order model.
///
/// Dispatches on the nonsmooth term: weighted norms reduce to a scalar
/// shrinkage by rotational symmetry, simplex indicators to a Euclidean
/// projection, and interval/box indicators to (projected) coordinate
/// descent, which is exact in one sweep for diagonal curvature.
pub fn solve_dominating_model(m: &FirstOrderModel) -> Result<Vec<f64>> {
    let n = m.dim();
    let b: Vec<f64> = m.gradient.iter().map(|g| -g).collect();
    match (&m.psi.term, &m.curvature) {
        (NonsmoothTerm::WeightedNorm(omega), ModelCurvature::ScaledIdentity(alpha)) => {
            if !(*alpha > 0.0) {
                return Err(Error::usage("norm model needs positive curvature"));
            }
            // M(v) = alpha/2 |z|^2 - <r, z> + omega |z| + const for z = v0 + v.
            let v0 = &m.psi.base;
            let r: Vec<f64> = b.iter().zip(v0).map(|(bi, vi)| bi + alpha * vi).collect();
            let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if rn == 0.0 {
                // Kink minimum: move exactly onto the origin.
                return Ok(v0.iter().map(|vi| -vi).collect());
            }
            let s = ((rn - omega) / alpha).max(0.0);
            Ok((0..n).map(|i| s * r[i] / rn - v0[i]).collect())
        }
        (NonsmoothTerm::Simplex(_), ModelCurvature::ScaledIdentity(alpha)) => {
            if !(*alpha > 0.0) {
                return Err(Error::usage("simplex model needs positive curvature"));
            }
            let v0 = &m.psi.base;
            let r: Vec<f64> = b.iter().zip(v0).map(|(bi, vi)| bi / alpha + vi).collect();
            let z = simplex_project(&r);
            Ok(z.iter().zip(v0).map(|(zi, vi)| zi - vi).collect())
        }
        (NonsmoothTerm::Interval(_), _) | (NonsmoothTerm::Box(_), _) => {
            let intervals: Vec<Interval> = match &m.psi.term {
                NonsmoothTerm::Interval(iv) => vec![iv.shifted(m.psi.base[0])],
                NonsmoothTerm::Box(ivs) => ivs
                    .iter()
                    .zip(&m.psi.base)
                    .map(|(iv, s)| iv.shifted(*s))
                    .collect(),
                _ => unreachable!(),
            };
            coordinate_descent_box(&b, &m.curvature, &intervals)
        }
        (NonsmoothTerm::WeightedNorm(_), _) | (NonsmoothTerm::Simplex(_), _) => Err(Error::usage(
            "norm/simplex model fast paths require scaled-identity curvature",
        )),
        (NonsmoothTerm::SmoothSingularSum(_), _) => Err(Error::usage(
            "no model solver for singular-sum terms; use bisection per component",
        )),
    }
}

/// Projected coordinate descent for `<g,v> + 1/2 <Bv,v>` over a box, run to
/// a fixed tolerance in the model energy. One sweep is exact for diagonal
/// curvature.
fn coordinate_descent_box(
    b: &[f64],
    curvature: &ModelCurvature,
    intervals: &[Interval],
) -> Result<Vec<f64>> {
    let n = b.len();
    let mut v = vec![0.0; n];
    // Zero displacement must stay admissible; the base point may sit one
    // rounding error outside its bound, so widen minimally.
    let intervals: Vec<Interval> = intervals
        .iter()
        .map(|iv| {
            Interval::new(iv.lower().min(0.0), iv.upper().max(0.0)).expect("widened interval")
        })
        .collect();
    let intervals = &intervals[..];
    let diagonal = matches!(curvature, ModelCurvature::ScaledIdentity(_))
        || matches!(curvature, ModelCurvature::Dense(d) if is_diagonal(d));
    let mut energy = 0.0;
    for sweep in 0..200 {
        let mut changed = 0.0f64;
        for i in 0..n {
            let bii = curvature.diag(i);
            // Linear coefficient of the 1D restriction at v_i (with the
            // diagonal contribution removed).
            let lin = b[i] - (curvature.row_dot(i, &v) - bii * v[i]);
            let t = if bii > 0.0 {
                exact_interval_quadratic(bii, lin, &intervals[i])?
            } else if lin == 0.0 {
                v[i]
            } else {
                let bound = if lin > 0.0 {
                    intervals[i].upper()
                } else {
                    intervals[i].lower()
                };
                if !bound.is_finite() {
                    return Err(Error::usage(
                        "model has zero curvature along an unbounded coordinate",
                    ));
                }
                bound
            };
            changed = changed.max((t - v[i]).abs());
            v[i] = t;
        }
        if diagonal {
            break;
        }
        let new_energy = model_quadratic_energy(b, curvature, &v);
        if sweep > 0 && energy - new_energy <= 1e-12 * (1.0 + new_energy.abs()) {
            break;
        }
        if changed == 0.0 {
            break;
        }
        energy = new_energy;
    }
    Ok(v)
}

fn model_quadratic_energy(b: &[f64], curvature: &ModelCurvature, v: &[f64]) -> f64 {
    let lin: f64 = b.iter().zip(v).map(|(bi, vi)| bi * vi).sum();
    0.5 * curvature.bilinear(v, v) - lin
}

fn is_diagonal(d: &DenseBlock) -> bool {
    for i in 0..d.nrows() {
        for j in 0..d.ncols() {
            if i != j && d.get(i, j) != 0.0 {
                return false;
            }
        }
    }
    true
}

/// Symmetric PSD matrix dominating the curvature of the restriction of the
/// smooth part to block `k`. Scaled identity via the Gershgorin bound for
/// quadratic parts; the restricted Lipschitz matrix of the difference terms
/// for quasilinear parts.
pub fn curvature_bound(smooth: &SmoothPart, k: usize) -> DenseBlock {
    smooth.curvature_block(k)
}
