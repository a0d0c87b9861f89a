//! Independent brute-force reference solvers.
//!
//! These are used by the test suite to pin expected values; the main solver
//! path never calls them. They share only the core arithmetic (vectors,
//! matrices, functional evaluation) with the solver and deliberately use
//! different minimization machinery: golden-section searches, support-set
//! enumeration, activity-pattern enumeration, and dense factorizations.

use nalgebra::{DMatrix, DVector};

use crate::blocks::BlockVector;
use crate::error::{Error, Result};
use crate::functional::{SeparableFunctional, SmoothCache, SmoothPart};
use crate::localsolve::bisect_scalar;
use crate::matrix::BlockSparseMatrix;
use crate::nonsmooth::{Interval, NonsmoothTerm};

/// Sweep cap of the coordinate-descent oracle.
const MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub point: BlockVector,
    pub energy: f64,
    pub converged: bool,
    pub sweeps: usize,
}

/// Exact block relaxation run until the per-sweep energy decrease falls
/// below `tol^2`. The local solves are exact (closed forms, derivative
/// bisection, support enumeration), so the sweep reaches a floating-point
/// fixed point where the decrease drops to zero.
pub fn oracle_coordinate_descent(
    f: &SeparableFunctional,
    u0: &BlockVector,
    tol: f64,
) -> Result<OracleOutcome> {
    if !f.is_feasible(u0) {
        return Err(Error::usage("oracle: infeasible start"));
    }
    let mut w = u0.clone();
    let mut cache = f.smooth().make_cache(&w);
    let energy = f.evaluate(&w)?.expect_finite("oracle start")?;
    let m = f.structure().num_blocks();
    let threshold = tol * tol * (1.0 + energy.abs());

    for sweep in 1..=MAX_SWEEPS {
        let mut decrease = 0.0;
        for k in 0..m {
            let delta = oracle_block_minimize(f, &w, &cache, k)?;
            if delta.iter().all(|&d| d == 0.0) {
                continue;
            }
            let smooth_delta = f.smooth().delta_value(&cache, k, &delta);
            let old_phi = f.term(k).value(w.block(k));
            let new_point: Vec<f64> = w.block(k).iter().zip(&delta).map(|(x, d)| x + d).collect();
            let new_phi = f.term(k).value(&new_point);
            let d_energy = match (old_phi.finite(), new_phi.finite()) {
                (Some(a), Some(b)) => smooth_delta + (b - a),
                _ => continue,
            };
            if d_energy >= 0.0 {
                continue;
            }
            w.block_mut(k).copy_from_slice(&new_point);
            f.smooth().commit_update(&mut cache, k, &delta);
            decrease -= d_energy;
        }
        if decrease <= threshold {
            return Ok(OracleOutcome {
                energy: f.evaluate(&w)?.expect_finite("oracle energy")?,
                point: w,
                converged: true,
                sweeps: sweep,
            });
        }
    }
    Ok(OracleOutcome {
        energy: f.evaluate(&w)?.expect_finite("oracle energy")?,
        point: w,
        converged: false,
        sweeps: MAX_SWEEPS,
    })
}

/// Exact minimization over one block: closed-form clamps for quadratic
/// scalar restrictions, bisection on the analytic directional derivative for
/// quasilinear ones, support enumeration for simplex blocks, and an angular
/// scan with Newton polish for norm blocks.
fn oracle_block_minimize(
    f: &SeparableFunctional,
    w: &BlockVector,
    cache: &SmoothCache,
    k: usize,
) -> Result<Vec<f64>> {
    let smooth = f.smooth();
    let x = w.block(k);
    match f.term(k) {
        NonsmoothTerm::Interval(iv) => {
            let t = axis_minimize(smooth, cache, k, 0, x[0], iv, None, &[])?;
            Ok(vec![t])
        }
        NonsmoothTerm::Box(ivs) => {
            let mut delta = vec![0.0; x.len()];
            for (j, iv) in ivs.iter().enumerate() {
                let t = axis_minimize(smooth, cache, k, j, x[j], iv, None, &delta)?;
                delta[j] += t;
            }
            Ok(delta)
        }
        NonsmoothTerm::SmoothSingularSum(fs) => {
            let mut delta = vec![0.0; x.len()];
            let positive = Interval::new(0.0, f64::INFINITY)?;
            for (j, func) in fs.iter().enumerate() {
                let t = axis_minimize(smooth, cache, k, j, x[j], &positive, Some(func), &delta)?;
                delta[j] += t;
            }
            Ok(delta)
        }
        NonsmoothTerm::Simplex(_) => simplex_block_qp(f, w, cache, k),
        NonsmoothTerm::WeightedNorm(omega) => norm_block_newton(f, w, cache, k, *omega),
    }
}

/// Bisection tolerance of the oracle line solves.
const ORACLE_LINE_TOL: f64 = 1e-16;

/// Exact minimization along component `j` of block `k`, starting from the
/// partial block update `applied`. Quadratic restrictions without a
/// singular term use the interval clamp directly; everything else bisects
/// on the analytic one-sided derivative.
#[allow(clippy::too_many_arguments)]
fn axis_minimize(
    smooth: &SmoothPart,
    cache: &SmoothCache,
    k: usize,
    j: usize,
    x: f64,
    bounds: &Interval,
    singular: Option<&crate::functional::ScalarFn>,
    applied: &[f64],
) -> Result<f64> {
    let n = applied.len().max(j + 1);
    let feasible = bounds.shifted(x);
    let make_delta = |t: f64| -> Vec<f64> {
        let mut d = vec![0.0; n];
        d[..applied.len()].copy_from_slice(applied);
        d[j] += t;
        d
    };
    if singular.is_none() {
        if let SmoothPart::Quadratic(_) = smooth {
            let q = smooth.diag_block(cache, k);
            let a = q.get(j, j);
            // Slope of the restriction at t = 0 given the applied update.
            let mut r = 0.0;
            {
                let mut g = vec![0.0; n];
                smooth.block_gradient(cache, k, &mut g);
                r += g[j];
                for (i, ai) in applied.iter().enumerate() {
                    r += q.get(j, i) * ai;
                }
            }
            if a > 0.0 {
                return Ok(feasible.clamp(-r / a));
            }
            if r == 0.0 {
                return Ok(0.0);
            }
            let bound = if r > 0.0 {
                feasible.lower()
            } else {
                feasible.upper()
            };
            if !bound.is_finite() {
                return Err(Error::numeric("oracle axis problem is not coercive"));
            }
            return Ok(bound);
        }
    }
    let value = |t: f64| -> f64 {
        let mut v = smooth.delta_value(cache, k, &make_delta(t));
        if let Some(func) = singular {
            v += (func.value)((x + t).max(0.0)) - (func.value)(x.max(0.0));
        }
        v
    };
    let mut axis = vec![0.0; n];
    axis[j] = 1.0;
    let deriv = |t: f64| -> f64 {
        let slope = smooth.local_shifted_dir_deriv(cache, k, &make_delta(t), &axis);
        slope
            + match singular {
                Some(func) => {
                    let xt = x + t;
                    if xt <= 0.0 {
                        (func.deriv)(0.0)
                    } else {
                        (func.deriv)(xt)
                    }
                }
                None => 0.0,
            }
    };
    let (lo, hi) = expand_bracket_deriv(&deriv, &feasible);
    let out = bisect_scalar(value, deriv, lo, hi, ORACLE_LINE_TOL)?;
    Ok(out.t)
}

/// Finite bracket for derivative bisection: clip unbounded sides by
/// doubling outward until the derivative sign flips.
fn expand_bracket_deriv(deriv: &impl Fn(f64) -> f64, range: &Interval) -> (f64, f64) {
    let mut lo = range.lower();
    let mut hi = range.upper();
    if !hi.is_finite() {
        let mut t = 1.0;
        for _ in 0..60 {
            if deriv(t) > 0.0 || t > 1e15 {
                break;
            }
            t *= 2.0;
        }
        hi = t;
    }
    if !lo.is_finite() {
        let mut t = -1.0;
        for _ in 0..60 {
            if deriv(t) < 0.0 || t < -1e15 {
                break;
            }
            t *= 2.0;
        }
        lo = t;
    }
    (lo, hi)
}

/// Exact simplex-constrained block QP by support-set enumeration. Requires a
/// quadratic smooth part (the shipped simplex problems are quadratic).
fn simplex_block_qp(
    f: &SeparableFunctional,
    w: &BlockVector,
    cache: &SmoothCache,
    k: usize,
) -> Result<Vec<f64>> {
    let smooth = f.smooth();
    let l = f.structure().size(k);
    if !matches!(smooth, SmoothPart::Quadratic(_)) {
        return Err(Error::usage(
            "oracle simplex blocks require a quadratic smooth part",
        ));
    }
    let q = smooth.diag_block(cache, k);
    let mut g = vec![0.0; l];
    smooth.block_gradient(cache, k, &mut g);
    let x = w.block(k);
    // Objective in z = x + xi: 1/2 z^T Q z + c^T z with c = g - Q x.
    let mut c = g;
    for i in 0..l {
        for j in 0..l {
            c[i] -= q.get(i, j) * x[j];
        }
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for support in 1u32..(1 << l) {
        let idx: Vec<usize> = (0..l).filter(|i| support & (1 << i) != 0).collect();
        let s = idx.len();
        // KKT system: [Q_SS 1; 1^T 0] [z_S; mu] = [-c_S; 1].
        let mut kkt = DMatrix::zeros(s + 1, s + 1);
        let mut rhs = DVector::zeros(s + 1);
        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate() {
                kkt[(a, b)] = q.get(ia, ib);
            }
            kkt[(a, s)] = 1.0;
            kkt[(s, a)] = 1.0;
            rhs[a] = -c[ia];
        }
        rhs[s] = 1.0;
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        if (0..s).any(|a| sol[a] < -1e-12 || !sol[a].is_finite()) {
            continue;
        }
        let mut z = vec![0.0; l];
        for (a, &ia) in idx.iter().enumerate() {
            z[ia] = sol[a].max(0.0);
        }
        let mut obj = 0.0;
        for i in 0..l {
            for j in 0..l {
                obj += 0.5 * z[i] * q.get(i, j) * z[j];
            }
            obj += c[i] * z[i];
        }
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, z));
        }
    }
    let (_, z) = best.ok_or_else(|| Error::numeric("simplex QP enumeration found no candidate"))?;
    Ok(z.iter().zip(x).map(|(zi, xi)| zi - xi).collect())
}

/// Exact norm-term block minimization for 2D blocks: scan directions with
/// the closed-form radial solve, compare with the kink candidate `z = 0`,
/// then polish nonzero minimizers with a damped Newton iteration on the
/// smooth stationarity equation `Qz + c + omega z/|z| = 0`.
fn norm_block_newton(
    f: &SeparableFunctional,
    w: &BlockVector,
    cache: &SmoothCache,
    k: usize,
    omega: f64,
) -> Result<Vec<f64>> {
    let smooth = f.smooth();
    let l = f.structure().size(k);
    if l != 2 {
        return Err(Error::usage("oracle norm blocks support dimension 2 only"));
    }
    let q = smooth.diag_block(cache, k);
    let mut g = vec![0.0; 2];
    smooth.block_gradient(cache, k, &mut g);
    let x = w.block(k);
    // Objective in z = x + xi: 1/2 z^T Q z + c^T z + omega |z| + const.
    let c = [
        g[0] - q.get(0, 0) * x[0] - q.get(0, 1) * x[1],
        g[1] - q.get(1, 0) * x[0] - q.get(1, 1) * x[1],
    ];
    let objective = |z: &[f64; 2]| -> f64 {
        let qz = [
            q.get(0, 0) * z[0] + q.get(0, 1) * z[1],
            q.get(1, 0) * z[0] + q.get(1, 1) * z[1],
        ];
        0.5 * (qz[0] * z[0] + qz[1] * z[1])
            + c[0] * z[0]
            + c[1] * z[1]
            + omega * (z[0] * z[0] + z[1] * z[1]).sqrt()
    };
    // Direction scan with the exact radial minimizer per direction.
    let mut best = ([0.0f64, 0.0f64], 0.0f64); // (z, objective); z = 0 candidate
    let scan = 1024;
    for i in 0..scan {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / scan as f64;
        let d = [theta.cos(), theta.sin()];
        let dqd = q.bilinear(&d, &d);
        let cd = c[0] * d[0] + c[1] * d[1];
        if dqd <= 0.0 {
            continue;
        }
        let t = (-(cd + omega) / dqd).max(0.0);
        let z = [t * d[0], t * d[1]];
        let val = objective(&z);
        if val < best.1 {
            best = (z, val);
        }
    }
    let (mut z, mut val) = best;
    // Newton polish away from the kink.
    for _ in 0..60 {
        let nz = (z[0] * z[0] + z[1] * z[1]).sqrt();
        if nz == 0.0 {
            break;
        }
        let grad = [
            q.get(0, 0) * z[0] + q.get(0, 1) * z[1] + c[0] + omega * z[0] / nz,
            q.get(1, 0) * z[0] + q.get(1, 1) * z[1] + c[1] + omega * z[1] / nz,
        ];
        let gn = (grad[0] * grad[0] + grad[1] * grad[1]).sqrt();
        if gn <= 1e-15 * (1.0 + omega + q.gershgorin_max()) {
            break;
        }
        // Hessian of the smooth extension: Q + omega (I/|z| - z z^T/|z|^3).
        let s = omega / nz;
        let zz = nz * nz;
        let h = [
            [
                q.get(0, 0) + s * (1.0 - z[0] * z[0] / zz),
                q.get(0, 1) - s * z[0] * z[1] / zz,
            ],
            [
                q.get(1, 0) - s * z[1] * z[0] / zz,
                q.get(1, 1) + s * (1.0 - z[1] * z[1] / zz),
            ],
        ];
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let step = [
            (h[1][1] * grad[0] - h[0][1] * grad[1]) / det,
            (-h[1][0] * grad[0] + h[0][0] * grad[1]) / det,
        ];
        let mut damping = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = [z[0] - damping * step[0], z[1] - damping * step[1]];
            let cv = objective(&cand);
            if cv <= val {
                z = cand;
                val = cv;
                improved = true;
                break;
            }
            damping *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(vec![z[0] - x[0], z[1] - x[1]])
}

/// Exact box-constrained QP minimizer by enumerating all `3^n` activity
/// patterns (at lower bound, at upper bound, free) and filtering by
/// feasibility and KKT signs.
pub fn oracle_box_qp_enumeration(
    a: &BlockSparseMatrix,
    b: &BlockVector,
    boxes: &[Interval],
) -> Result<BlockVector> {
    let n = a.structure().total_dim();
    if n > 10 {
        return Err(Error::usage("box QP enumeration capped at n = 10"));
    }
    if boxes.len() != n || !b.matches(a.structure()) {
        return Err(Error::usage("box QP enumeration: size mismatch"));
    }
    let ad = a.to_dense();
    let bd = DVector::from_column_slice(b.as_slice());
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut pattern = vec![0u8; n]; // 0 free, 1 lower, 2 upper
    'outer: loop {
        // Fixed values and free set for this pattern.
        let mut fixed = DVector::zeros(n);
        let mut free = Vec::new();
        let mut valid = true;
        for i in 0..n {
            match pattern[i] {
                0 => free.push(i),
                1 => {
                    if !boxes[i].lower().is_finite() {
                        valid = false;
                    } else {
                        fixed[i] = boxes[i].lower();
                    }
                }
                _ => {
                    if !boxes[i].upper().is_finite() {
                        valid = false;
                    } else {
                        fixed[i] = boxes[i].upper();
                    }
                }
            }
        }
        if valid {
            let mut x = fixed.clone();
            let nf = free.len();
            let mut solvable = true;
            if nf > 0 {
                let mut aff = DMatrix::zeros(nf, nf);
                let mut rhs = DVector::zeros(nf);
                for (r, &i) in free.iter().enumerate() {
                    rhs[r] = bd[i];
                    for j in 0..n {
                        if pattern[j] != 0 {
                            rhs[r] -= ad[(i, j)] * fixed[j];
                        }
                    }
                    for (s, &j) in free.iter().enumerate() {
                        aff[(r, s)] = ad[(i, j)];
                    }
                }
                match aff.lu().solve(&rhs) {
                    Some(sol) => {
                        for (r, &i) in free.iter().enumerate() {
                            x[i] = sol[r];
                        }
                    }
                    None => solvable = false,
                }
            }
            if solvable {
                let feasible = (0..n).all(|i| {
                    boxes[i].contains(x[i]) || {
                        let span = 1.0 + x[i].abs();
                        x[i] >= boxes[i].lower() - 1e-12 * span
                            && x[i] <= boxes[i].upper() + 1e-12 * span
                    }
                });
                if feasible {
                    let grad = &ad * &x - &bd;
                    let kkt_ok = (0..n).all(|i| match pattern[i] {
                        0 => grad[i].abs() <= 1e-9,
                        1 => grad[i] >= -1e-9,
                        _ => grad[i] <= 1e-9,
                    });
                    if kkt_ok {
                        let obj = 0.5 * (&ad * &x).dot(&x) - bd.dot(&x);
                        if best.as_ref().is_none_or(|(bv, _)| obj < *bv) {
                            best = Some((obj, x));
                        }
                    }
                }
            }
        }
        // Next ternary pattern.
        for i in 0..=n {
            if i == n {
                break 'outer;
            }
            pattern[i] += 1;
            if pattern[i] <= 2 {
                break;
            }
            pattern[i] = 0;
        }
    }
    let (_, x) = best.ok_or_else(|| Error::numeric("box QP enumeration found no KKT point"))?;
    BlockVector::from_vec(a.structure(), x.as_slice().to_vec())
}

/// Exact simplex projection by support-set enumeration; verifies the
/// sorting-based algorithm.
pub fn oracle_simplex_projection_enum(r: &[f64]) -> Result<Vec<f64>> {
    let l = r.len();
    if !(2..=12).contains(&l) {
        return Err(Error::usage(
            "simplex projection enumeration needs 2 <= L <= 12",
        ));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for support in 1u32..(1 << l) {
        let idx: Vec<usize> = (0..l).filter(|i| support & (1 << i) != 0).collect();
        let s = idx.len() as f64;
        let sum: f64 = idx.iter().map(|&i| r[i]).sum();
        let shift = (1.0 - sum) / s;
        let mut z = vec![0.0; l];
        let mut feasible = true;
        for &i in &idx {
            z[i] = r[i] + shift;
            if z[i] < -1e-12 {
                feasible = false;
                break;
            }
        }
        if !feasible {
            continue;
        }
        let dist: f64 = z.iter().zip(r).map(|(zi, ri)| (zi - ri) * (zi - ri)).sum();
        if best.as_ref().is_none_or(|(bd, _)| dist < *bd) {
            best = Some((dist, z));
        }
    }
    Ok(best.expect("full support is always feasible").1)
}

/// Dense SPD solve used as a cross-check oracle.
pub fn dense_solve_spd(a: &BlockSparseMatrix, b: &BlockVector) -> Result<BlockVector> {
    if !b.matches(a.structure()) {
        return Err(Error::usage("dense solve: structure mismatch"));
    }
    let ad = a.to_dense();
    let bd = DVector::from_column_slice(b.as_slice());
    let x = ad
        .clone()
        .cholesky()
        .map(|c| c.solve(&bd))
        .or_else(|| ad.lu().solve(&bd))
        .ok_or_else(|| Error::numeric("dense solve failed"))?;
    BlockVector::from_vec(a.structure(), x.as_slice().to_vec())
}
