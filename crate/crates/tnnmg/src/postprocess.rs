//! Post-processing of the linear correction: projection into the domain
//! followed by a monotone line search.
//!
//! Adding the raw correction may leave the domain, and damping it until
//! feasible can shrink steps badly. Projecting first and damping the
//! projected correction keeps feasibility and, along the projected ray,
//! usually permits much larger steps.

use crate::blocks::BlockVector;
use crate::error::{Error, Result};
use crate::functional::{Energy, SeparableFunctional};
use crate::localsolve::bisect_scalar;

/// Tolerance of the damping line search.
const DAMP_TOL: f64 = 1e-12;

/// Correction `vt` such that `u + vt` is the block-wise Euclidean projection
/// of `u + v` onto `dom J`. Exact because the domain is a product of
/// per-block convex sets. Blocks that stay feasible keep their correction
/// bit for bit.
pub fn project_into_domain(
    f: &SeparableFunctional,
    u: &BlockVector,
    v: &BlockVector,
) -> Result<BlockVector> {
    if !u.matches(f.structure()) || !v.matches(f.structure()) {
        return Err(Error::usage("project_into_domain: structure mismatch"));
    }
    let mut vt = v.clone();
    for k in 0..f.structure().num_blocks() {
        let uk = u.block(k);
        let vk = v.block(k);
        let target: Vec<f64> = uk.iter().zip(vk).map(|(a, b)| a + b).collect();
        let projected = f.term(k).domain_project(&target);
        if projected != target {
            for ((out, p), a) in vt.block_mut(k).iter_mut().zip(&projected).zip(uk) {
                *out = p - a;
            }
        }
    }
    Ok(vt)
}

/// Damping factor `rho in [0, rho_max]` with the monotone guarantee
/// `J(u + rho vt) <= J(u)`; for convex energies the returned factor is a
/// near-exact minimizer along the ray.
///
/// The search bisects on the one-sided directional derivative of
/// `rho -> J(u + rho vt)` over the feasible part of `[0, rho_max]` and falls
/// back to halving from one when the ray value is not convex.
pub fn damp(
    f: &SeparableFunctional,
    u: &BlockVector,
    vt: &BlockVector,
    rho_max: f64,
) -> Result<f64> {
    if !(rho_max > 0.0) {
        return Err(Error::usage("damp: rho_max must be positive"));
    }
    let j0 = f
        .evaluate(u)?
        .expect_finite("damp: base point must be feasible")?;
    if vt.as_slice().iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let value_at = |rho: f64| -> Result<Energy> { f.evaluate(&u.add_scaled(rho, vt)) };
    if !value_at(1.0)?.is_finite() {
        return Err(Error::usage("damp: u + vt must be feasible"));
    }

    // Feasible damping factors form an interval [0, rho_f] containing 1;
    // locate its upper end inside [1, rho_max] by bisection.
    let mut hi = rho_max;
    if !value_at(hi)?.is_finite() {
        let mut lo_f = 1.0;
        let mut hi_f = rho_max;
        for _ in 0..60 {
            let mid = 0.5 * (lo_f + hi_f);
            if mid <= lo_f || mid >= hi_f {
                break;
            }
            if value_at(mid)?.is_finite() {
                lo_f = mid;
            } else {
                hi_f = mid;
            }
        }
        hi = lo_f;
    }

    let ray_value = |rho: f64| -> f64 {
        value_at(rho)
            .ok()
            .and_then(|e| e.finite())
            .unwrap_or(f64::INFINITY)
    };
    let ray_deriv = |rho: f64| -> f64 {
        let point = u.add_scaled(rho, vt);
        let smooth_slope = match f.gradient(&point) {
            Ok(g) => g.dot(vt),
            Err(_) => return f64::INFINITY,
        };
        let mut slope = smooth_slope;
        for k in 0..f.structure().num_blocks() {
            let s = f
                .term(k)
                .directional_derivative(point.block(k), vt.block(k));
            if s == f64::INFINITY {
                return f64::INFINITY;
            }
            slope += s;
            if slope == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
        }
        slope
    };

    let out = bisect_scalar(ray_value, ray_deriv, 0.0, hi, DAMP_TOL)?;
    // Candidate set keeps the guarantee versus both the smoothed iterate and
    // the projected full step.
    let mut best = (0.0, j0);
    for rho in [out.t, 1.0, hi] {
        let val = ray_value(rho);
        if val < best.1 {
            best = (rho, val);
        }
    }
    let (mut rho, mut val) = best;

    if val > j0 {
        // Non-convex ray or numeric trouble: halving backtracking from one.
        rho = 1.0;
        loop {
            val = ray_value(rho);
            if val <= j0 {
                break;
            }
            rho *= 0.5;
            if rho < 1e-30 {
                rho = 0.0;
                val = j0;
                break;
            }
        }
    }
    // A gain below machine slack is indistinguishable from a flat ray;
    // resolve the tie toward no movement.
    if j0 - val <= 4.0 * f64::EPSILON * (1.0 + j0.abs()) {
        rho = 0.0;
    }
    debug_assert!(val <= j0 + 1e-14 * (1.0 + j0.abs()));
    Ok(rho)
}
