//! Nonlinear block Gauss--Seidel pre-smoother.
//!
//! One smoothing step visits the blocks in order and inexactly minimizes the
//! energy in each block while the others stay fixed. Every block update is
//! checked for energy decrease; a local solver that increases the energy
//! beyond roundoff slack is reported as an internal error with its block
//! index.

use crate::blocks::BlockVector;
use crate::error::{Error, Result};
use crate::functional::{Energy, SeparableFunctional, SmoothCache, SmoothPart};
use crate::localsolve::{
    bisect_scalar, exact_interval_quadratic, polyhedral_gs_directions, solve_dominating_model,
    FirstOrderModel, ModelCurvature, ShiftedTerm,
};
use crate::nonsmooth::{Interval, NonsmoothTerm};

/// Tolerance for the scalar line searches inside the smoother.
const LINE_SEARCH_TOL: f64 = 1e-12;
/// Inner sweeps for the exact simplex block solve.
const SIMPLEX_INNER_SWEEPS: usize = 50;

/// Local solver used for the block subproblems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalSolverKind {
    /// Exact scalar minimization per component: closed form for quadratic
    /// restrictions, derivative-sign bisection otherwise.
    ExactBisection,
    /// One-dimensional sweeps along the edge directions of the polyhedral
    /// domain partition (axes for boxes, simplex edges).
    PolyhedralGs,
    /// Exact minimization of a dominating first-order model.
    DominatingModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOrder {
    Forward,
    /// Forward sweep followed by a backward sweep.
    Symmetric,
}

#[derive(Debug, Clone)]
pub struct SmootherConfig {
    pub kind: LocalSolverKind,
    pub sweeps: usize,
    pub order: SweepOrder,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            kind: LocalSolverKind::ExactBisection,
            sweeps: 1,
            order: SweepOrder::Forward,
        }
    }
}

/// One application of the nonlinear Gauss--Seidel smoother.
///
/// The input must be feasible; the output is feasible and its energy does
/// not exceed the input energy. Updates that fail to decrease the energy
/// within roundoff are rejected (the iterate keeps its value), so the map is
/// monotone by construction.
pub fn smooth(
    f: &SeparableFunctional,
    u: &BlockVector,
    cfg: &SmootherConfig,
) -> Result<BlockVector> {
    if cfg.sweeps == 0 {
        return Err(Error::usage("smoother needs at least one sweep"));
    }
    if !u.matches(f.structure()) {
        return Err(Error::usage("smoother: vector structure mismatch"));
    }
    if !f.is_feasible(u) {
        return Err(Error::usage("smoother: infeasible input iterate"));
    }
    let mut w = u.clone();
    let mut state = SweepState::new(f, &w)?;
    let m = f.structure().num_blocks();
    for _ in 0..cfg.sweeps {
        for k in 0..m {
            state.update_block(f, &mut w, k, cfg.kind)?;
        }
        if cfg.order == SweepOrder::Symmetric {
            for k in (0..m).rev() {
                state.update_block(f, &mut w, k, cfg.kind)?;
            }
        }
    }
    Ok(w)
}

/// Running evaluation state for one smoothing pass.
struct SweepState {
    cache: SmoothCache,
    energy: f64,
}

impl SweepState {
    fn new(f: &SeparableFunctional, w: &BlockVector) -> Result<Self> {
        let energy = f.evaluate(w)?.expect_finite("smoother input")?;
        Ok(SweepState {
            cache: f.smooth().make_cache(w),
            energy,
        })
    }

    fn update_block(
        &mut self,
        f: &SeparableFunctional,
        w: &mut BlockVector,
        k: usize,
        kind: LocalSolverKind,
    ) -> Result<()> {
        let term = f.term(k).clone();
        match kind {
            LocalSolverKind::ExactBisection => match &term {
                NonsmoothTerm::Interval(_)
                | NonsmoothTerm::Box(_)
                | NonsmoothTerm::SmoothSingularSum(_) => {
                    self.axis_sweep(f, w, k, &term)?;
                }
                NonsmoothTerm::Simplex(_) => {
                    // Repeated edge sweeps converge to the exact block
                    // minimizer; the edges span the tangent space.
                    for _ in 0..SIMPLEX_INNER_SWEEPS {
                        let moved = self.direction_sweep(f, w, k, &term)?;
                        if moved <= 1e-14 {
                            break;
                        }
                    }
                }
                NonsmoothTerm::WeightedNorm(_) => {
                    // No exact closed form for general local curvature; the
                    // dominating model step is monotone and stable.
                    self.model_step(f, w, k, &term)?;
                }
            },
            LocalSolverKind::PolyhedralGs => match &term {
                NonsmoothTerm::WeightedNorm(_) => {
                    self.model_step(f, w, k, &term)?;
                }
                _ => {
                    self.direction_sweep(f, w, k, &term)?;
                }
            },
            LocalSolverKind::DominatingModel => match &term {
                NonsmoothTerm::SmoothSingularSum(_) => {
                    self.axis_sweep(f, w, k, &term)?;
                }
                _ => {
                    self.model_step(f, w, k, &term)?;
                }
            },
        }
        Ok(())
    }

    /// Exact coordinate sweep over the components of block `k`.
    fn axis_sweep(
        &mut self,
        f: &SeparableFunctional,
        w: &mut BlockVector,
        k: usize,
        term: &NonsmoothTerm,
    ) -> Result<()> {
        let n = f.structure().size(k);
        let smooth = f.smooth();
        for j in 0..n {
            let mut dir = vec![0.0; n];
            dir[j] = 1.0;
            let range = feasible_range(term, w.block(k), &dir);
            let t = self.solve_along(smooth, w, k, term, &dir, &range)?;
            if t != 0.0 {
                let mut delta = vec![0.0; n];
                delta[j] = t;
                self.try_apply(f, w, k, &delta)?;
            }
        }
        Ok(())
    }

    /// One sweep over the polyhedral edge directions of block `k` in
    /// lexicographic order. Returns the largest step taken.
    fn direction_sweep(
        &mut self,
        f: &SeparableFunctional,
        w: &mut BlockVector,
        k: usize,
        term: &NonsmoothTerm,
    ) -> Result<f64> {
        let dirs = polyhedral_gs_directions(term, w.block(k));
        if dirs.is_empty() {
            self.model_step(f, w, k, term)?;
            return Ok(0.0);
        }
        let smooth = f.smooth();
        let mut largest = 0.0f64;
        for dir in dirs {
            let range = feasible_range(term, w.block(k), &dir);
            let t = self.solve_along(smooth, w, k, term, &dir, &range)?;
            if t != 0.0 {
                let delta: Vec<f64> = dir.iter().map(|d| t * d).collect();
                if self.try_apply(f, w, k, &delta)? {
                    largest = largest.max(t.abs());
                }
            }
        }
        Ok(largest)
    }

    /// Exact scalar minimization of the energy along `dir` within block `k`.
    fn solve_along(
        &self,
        smooth: &SmoothPart,
        w: &BlockVector,
        k: usize,
        term: &NonsmoothTerm,
        dir: &[f64],
        range: &Interval,
    ) -> Result<f64> {
        if range.lower() == range.upper() {
            return Ok(0.0);
        }
        // Quadratic restrictions have a closed form, but only when the
        // nonsmooth term is an indicator (no slope of its own on the
        // feasible range). Singular sums always go through bisection.
        let indicator = !matches!(term, NonsmoothTerm::SmoothSingularSum(_));
        if indicator && matches!(smooth, SmoothPart::Quadratic(_)) {
            let a = {
                let akk = smooth.diag_block(&self.cache, k);
                akk.bilinear(dir, dir)
            };
            let g = smooth.local_dir_deriv(&self.cache, k, dir, 0.0);
            if a > 0.0 {
                return exact_interval_quadratic(a, -g, range);
            }
            if g == 0.0 {
                return Ok(0.0);
            }
            let bound = if g > 0.0 {
                range.lower()
            } else {
                range.upper()
            };
            if !bound.is_finite() {
                return Err(Error::numeric(format!(
                    "block {k}: local problem not coercive along a direction"
                )));
            }
            return Ok(bound);
        }
        // One-sided derivative of the nonsmooth term along dir, needed only
        // for singular sums; indicators contribute nothing inside their
        // domain and the range already encodes feasibility.
        let x = w.block(k);
        let singular = !indicator;
        let phi_slope = |t: f64| -> f64 {
            if !singular {
                return 0.0;
            }
            let shifted: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + t * di).collect();
            term.directional_derivative(&shifted, dir)
        };
        let phi_delta = |t: f64| -> f64 {
            if !singular {
                return 0.0;
            }
            let shifted: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + t * di).collect();
            match (term.value(&shifted), term.value(x)) {
                (Energy::Finite(new), Energy::Finite(old)) => new - old,
                _ => f64::INFINITY,
            }
        };
        let value = |t: f64| smooth.local_dir_delta(&self.cache, k, dir, t) + phi_delta(t);
        let deriv = |t: f64| smooth.local_dir_deriv(&self.cache, k, dir, t) + phi_slope(t);
        let (lo, hi) = finite_bracket(&deriv, range);
        let out = bisect_scalar(value, deriv, lo, hi, LINE_SEARCH_TOL)?;
        Ok(out.t)
    }

    /// Dominating-model step for block `k`.
    fn model_step(
        &mut self,
        f: &SeparableFunctional,
        w: &mut BlockVector,
        k: usize,
        term: &NonsmoothTerm,
    ) -> Result<()> {
        let smooth = f.smooth();
        let n = f.structure().size(k);
        let mut gradient = vec![0.0; n];
        smooth.block_gradient(&self.cache, k, &mut gradient);
        let curvature = match term {
            NonsmoothTerm::WeightedNorm(_) | NonsmoothTerm::Simplex(_) => {
                let bound = smooth.curvature_block(k);
                ModelCurvature::ScaledIdentity(bound.gershgorin_max())
            }
            _ => match smooth {
                // For quadratic parts the local restriction is exactly
                // quadratic, so the "model" is the local problem itself.
                SmoothPart::Quadratic(_) => {
                    ModelCurvature::Dense(smooth.diag_block(&self.cache, k))
                }
                SmoothPart::Quasilinear(_) => ModelCurvature::Dense(smooth.curvature_block(k)),
            },
        };
        let model = FirstOrderModel {
            constant: 0.0,
            gradient,
            curvature,
            psi: ShiftedTerm {
                term: term.clone(),
                base: w.block(k).to_vec(),
            },
        };
        let delta = solve_dominating_model(&model)?;
        self.try_apply(f, w, k, &delta)?;
        Ok(())
    }

    /// Apply a candidate block update when it does not increase the energy.
    ///
    /// Ties resolve toward zero displacement. A candidate that increases the
    /// energy beyond roundoff slack signals a broken local solver.
    fn try_apply(
        &mut self,
        f: &SeparableFunctional,
        w: &mut BlockVector,
        k: usize,
        delta: &[f64],
    ) -> Result<bool> {
        if delta.iter().all(|&d| d == 0.0) {
            return Ok(false);
        }
        let smooth_delta = f.smooth().delta_value(&self.cache, k, delta);
        let term = f.term(k);
        let old_phi = term.value(w.block(k));
        let shifted: Vec<f64> = w.block(k).iter().zip(delta).map(|(x, d)| x + d).collect();
        let new_phi = term.value(&shifted);
        let delta_energy = match (old_phi, new_phi) {
            (Energy::Finite(a), Energy::Finite(b)) => smooth_delta + (b - a),
            // The candidate left the domain; reject it.
            _ => return Ok(false),
        };
        let slack = 1e-10 * (1.0 + self.energy.abs());
        if delta_energy > slack {
            return Err(Error::internal(format!(
                "local solver increased energy by {delta_energy:.3e} in block {k}"
            )));
        }
        if delta_energy > 0.0 {
            return Ok(false);
        }
        w.block_mut(k).copy_from_slice(&shifted);
        f.smooth().commit_update(&mut self.cache, k, delta);
        self.energy += delta_energy;
        Ok(true)
    }
}

/// Feasible step range for moving from `x` along `d` inside `dom phi`.
fn feasible_range(term: &NonsmoothTerm, x: &[f64], d: &[f64]) -> Interval {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut restrict = |bound_lo: f64, bound_hi: f64| {
        lo = lo.max(bound_lo);
        hi = hi.min(bound_hi);
    };
    match term {
        NonsmoothTerm::Interval(iv) => {
            range_from_bounds(iv.lower(), iv.upper(), x[0], d[0], &mut restrict)
        }
        NonsmoothTerm::Box(ivs) => {
            for (j, iv) in ivs.iter().enumerate() {
                range_from_bounds(iv.lower(), iv.upper(), x[j], d[j], &mut restrict);
            }
        }
        NonsmoothTerm::Simplex(_) | NonsmoothTerm::SmoothSingularSum(_) => {
            for (xj, dj) in x.iter().zip(d) {
                range_from_bounds(0.0, f64::INFINITY, *xj, *dj, &mut restrict);
            }
        }
        NonsmoothTerm::WeightedNorm(_) => {}
    }
    if lo > hi {
        // Numerical corner: the point sits on the boundary within roundoff.
        lo = 0.0;
        hi = 0.0;
    }
    lo = lo.min(0.0);
    hi = hi.max(0.0);
    Interval::new(lo, hi).expect("feasible range is an interval")
}

fn range_from_bounds(lower: f64, upper: f64, x: f64, d: f64, restrict: &mut impl FnMut(f64, f64)) {
    if d > 0.0 {
        if upper.is_finite() {
            restrict(f64::NEG_INFINITY, (upper - x) / d);
        }
        if lower.is_finite() {
            restrict((lower - x) / d, f64::INFINITY);
        }
    } else if d < 0.0 {
        if lower.is_finite() {
            restrict(f64::NEG_INFINITY, (lower - x) / d);
        }
        if upper.is_finite() {
            restrict((upper - x) / d, f64::INFINITY);
        }
    }
}

/// Clip an unbounded feasible range to a finite bisection bracket by
/// doubling outward until the derivative sign flips.
fn finite_bracket(deriv: &impl Fn(f64) -> f64, range: &Interval) -> (f64, f64) {
    let mut lo = range.lower();
    let mut hi = range.upper();
    if !hi.is_finite() {
        let mut t = 1.0;
        for _ in 0..60 {
            if deriv(t) > 0.0 || t >= 1e18 {
                break;
            }
            t *= 2.0;
        }
        hi = t;
    }
    if !lo.is_finite() {
        let mut t = -1.0;
        for _ in 0..60 {
            if deriv(t) < 0.0 || t <= -1e18 {
                break;
            }
            t *= 2.0;
        }
        lo = t;
    }
    (lo, hi)
}
