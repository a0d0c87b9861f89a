//! Separable energy functionals `J(v) = J0(v) + sum_k phi_k(v_k)`.
//!
//! The smooth part `J0` is either a quadratic form or a sum of convex scalar
//! functions of affine difference terms (the quasilinear form arising from
//! minimal-surface-type energies). Both variants expose value, gradient,
//! Hessian, and the incremental per-block evaluations the Gauss--Seidel
//! smoother needs.

use std::sync::Arc;

use crate::blocks::{BlockStructure, BlockVector};
use crate::error::{Error, Result};
use crate::matrix::{BlockSparseMatrix, DenseBlock};
use crate::nonsmooth::NonsmoothTerm;

/// Extended-real energy value. Infinities are carried by the tag, never by
/// IEEE infinities inside arithmetic, which keeps comparisons total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Energy {
    Finite(f64),
    Infinite,
}

impl Energy {
    pub fn is_finite(&self) -> bool {
        matches!(self, Energy::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Energy::Finite(v) => Some(*v),
            Energy::Infinite => None,
        }
    }

    pub fn expect_finite(&self, context: &str) -> Result<f64> {
        self.finite()
            .ok_or_else(|| Error::usage(format!("{context}: infinite energy")))
    }

    pub fn plus(self, other: Energy) -> Energy {
        match (self, other) {
            (Energy::Finite(a), Energy::Finite(b)) => Energy::Finite(a + b),
            _ => Energy::Infinite,
        }
    }

    /// `self <= other + slack`, with infinity above every finite value.
    pub fn le_with_slack(&self, other: &Energy, slack: f64) -> bool {
        match (self, other) {
            (Energy::Finite(a), Energy::Finite(b)) => *a <= *b + slack,
            (Energy::Finite(_), Energy::Infinite) => true,
            (Energy::Infinite, _) => false,
        }
    }
}

/// Scalar curve with analytic first and second derivatives.
#[derive(Debug, Clone, Copy)]
pub struct ScalarFn {
    pub value: fn(f64) -> f64,
    pub deriv: fn(f64) -> f64,
    pub second: fn(f64) -> f64,
}

impl ScalarFn {
    /// `gamma(z) = sqrt(1 + z^2)`, the minimal-surface integrand. Its second
    /// derivative is bounded by one.
    pub fn minimal_surface() -> Self {
        ScalarFn {
            value: |z| (1.0 + z * z).sqrt(),
            deriv: |z| z / (1.0 + z * z).sqrt(),
            second: |z| (1.0 + z * z).powf(-1.5),
        }
    }

    /// `x ln x` on `[0, inf)`, continuous at zero with singular derivatives.
    pub fn entropy() -> Self {
        ScalarFn {
            value: |x| if x <= 0.0 { 0.0 } else { x * x.ln() },
            deriv: |x| {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    x.ln() + 1.0
                }
            },
            second: |x| if x <= 0.0 { f64::INFINITY } else { 1.0 / x },
        }
    }
}

/// `J0(v) = 1/2 <A v, v> - <b, v>` with a symmetric block-sparse `A`.
#[derive(Debug, Clone)]
pub struct QuadraticPart {
    matrix: BlockSparseMatrix,
    linear: BlockVector,
}

impl QuadraticPart {
    pub fn new(matrix: BlockSparseMatrix, linear: BlockVector) -> Result<Self> {
        if !linear.matches(matrix.structure()) {
            return Err(Error::usage("quadratic part: matrix/vector mismatch"));
        }
        let defect = matrix.symmetry_defect();
        if defect > 1e-10 {
            return Err(Error::usage(format!(
                "quadratic part: matrix asymmetry {defect:.3e} exceeds 1e-10"
            )));
        }
        Ok(QuadraticPart { matrix, linear })
    }

    pub fn matrix(&self) -> &BlockSparseMatrix {
        &self.matrix
    }

    pub fn linear(&self) -> &BlockVector {
        &self.linear
    }
}

/// One additive term `weight * gamma(<coeffs, v> + shift)` of a quasilinear
/// energy. Coefficients address global scalar indices.
#[derive(Debug, Clone)]
pub struct DifferenceTerm {
    pub coeffs: Vec<(usize, f64)>,
    pub shift: f64,
    pub weight: f64,
}

/// `J0(v) = sum_i w_i gamma(z_i(v))` with affine arguments `z_i`.
#[derive(Debug, Clone)]
pub struct QuasilinearPart {
    structure: Arc<BlockStructure>,
    terms: Vec<DifferenceTerm>,
    curve: ScalarFn,
    /// Upper bound for `gamma''`; scales the dominating curvature matrix.
    curvature_bound: f64,
    /// Per block: indices of the terms whose argument depends on the block.
    incidence: Vec<Vec<usize>>,
}

impl QuasilinearPart {
    pub fn new(
        structure: &Arc<BlockStructure>,
        terms: Vec<DifferenceTerm>,
        curve: ScalarFn,
        curvature_bound: f64,
    ) -> Result<Self> {
        let mut incidence = vec![Vec::new(); structure.num_blocks()];
        for (t, term) in terms.iter().enumerate() {
            if term.weight < 0.0 || !term.weight.is_finite() {
                return Err(Error::usage("difference term weight must be nonnegative"));
            }
            let mut touched: Vec<usize> = term
                .coeffs
                .iter()
                .map(|(idx, _)| {
                    if *idx >= structure.total_dim() {
                        return usize::MAX;
                    }
                    structure.block_of_index(*idx)
                })
                .collect();
            if touched.contains(&usize::MAX) {
                return Err(Error::usage("difference term index out of range"));
            }
            touched.sort_unstable();
            touched.dedup();
            for k in touched {
                incidence[k].push(t);
            }
        }
        Ok(QuasilinearPart {
            structure: Arc::clone(structure),
            terms,
            curve,
            curvature_bound,
            incidence,
        })
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    fn argument(&self, term: &DifferenceTerm, v: &BlockVector) -> f64 {
        let mut z = term.shift;
        for (idx, c) in &term.coeffs {
            z += c * v.as_slice()[*idx];
        }
        z
    }
}

/// Smooth part of a separable functional.
#[derive(Debug, Clone)]
pub enum SmoothPart {
    Quadratic(QuadraticPart),
    Quasilinear(QuasilinearPart),
}

/// State that makes per-block evaluations O(local size): the running
/// residual for quadratic parts, the term arguments for quasilinear parts.
#[derive(Debug, Clone)]
pub enum SmoothCache {
    Quadratic { residual: BlockVector },
    Quasilinear { args: Vec<f64> },
}

impl SmoothPart {
    pub fn structure(&self) -> &Arc<BlockStructure> {
        match self {
            SmoothPart::Quadratic(q) => q.matrix.structure(),
            SmoothPart::Quasilinear(q) => &q.structure,
        }
    }

    pub fn value(&self, v: &BlockVector) -> f64 {
        match self {
            SmoothPart::Quadratic(q) => 0.5 * q.matrix.quadratic_form(v) - q.linear.dot(v),
            SmoothPart::Quasilinear(q) => q
                .terms
                .iter()
                .map(|t| t.weight * (q.curve.value)(q.argument(t, v)))
                .sum(),
        }
    }

    pub fn gradient(&self, v: &BlockVector) -> BlockVector {
        match self {
            SmoothPart::Quadratic(q) => {
                let mut g = BlockVector::zeros(q.matrix.structure());
                q.matrix.apply_into(v, &mut g);
                g.axpy(-1.0, &q.linear);
                g
            }
            SmoothPart::Quasilinear(q) => {
                let mut g = BlockVector::zeros(&q.structure);
                for t in &q.terms {
                    let s = t.weight * (q.curve.deriv)(q.argument(t, v));
                    for (idx, c) in &t.coeffs {
                        g.as_mut_slice()[*idx] += s * c;
                    }
                }
                g
            }
        }
    }

    pub fn hessian(&self, v: &BlockVector) -> Result<BlockSparseMatrix> {
        match self {
            SmoothPart::Quadratic(q) => Ok(q.matrix.clone()),
            SmoothPart::Quasilinear(q) => {
                let mut b = BlockSparseMatrix::builder(&q.structure);
                for t in &q.terms {
                    let s = t.weight * (q.curve.second)(q.argument(t, v));
                    for (i1, c1) in &t.coeffs {
                        for (i2, c2) in &t.coeffs {
                            b.add_scalar(*i1, *i2, s * c1 * c2);
                        }
                    }
                }
                b.build()
            }
        }
    }

    pub fn make_cache(&self, v: &BlockVector) -> SmoothCache {
        match self {
            SmoothPart::Quadratic(q) => {
                let mut residual = BlockVector::zeros(q.matrix.structure());
                q.matrix.apply_into(v, &mut residual);
                residual.axpy(-1.0, &q.linear);
                SmoothCache::Quadratic { residual }
            }
            SmoothPart::Quasilinear(q) => SmoothCache::Quasilinear {
                args: q.terms.iter().map(|t| q.argument(t, v)).collect(),
            },
        }
    }

    /// Gradient of `J0` restricted to block `k` at the cached point.
    pub fn block_gradient(&self, cache: &SmoothCache, k: usize, out: &mut [f64]) {
        match (self, cache) {
            (SmoothPart::Quadratic(_), SmoothCache::Quadratic { residual }) => {
                out.copy_from_slice(residual.block(k));
            }
            (SmoothPart::Quasilinear(q), SmoothCache::Quasilinear { args }) => {
                out.fill(0.0);
                let range = q.structure.range(k);
                for &t in &q.incidence[k] {
                    let term = &q.terms[t];
                    let s = term.weight * (q.curve.deriv)(args[t]);
                    for (idx, c) in &term.coeffs {
                        if range.contains(idx) {
                            out[idx - range.start] += s * c;
                        }
                    }
                }
            }
            _ => unreachable!("cache kind matches smooth part"),
        }
    }

    /// `J0(v + P_k delta) - J0(v)` using the cached point.
    pub fn delta_value(&self, cache: &SmoothCache, k: usize, delta: &[f64]) -> f64 {
        match (self, cache) {
            (SmoothPart::Quadratic(q), SmoothCache::Quadratic { residual }) => {
                let akk = q.matrix.diag_block(k);
                let mut acc = 0.5 * akk.bilinear(delta, delta);
                for (r, d) in residual.block(k).iter().zip(delta) {
                    acc += r * d;
                }
                acc
            }
            (SmoothPart::Quasilinear(q), SmoothCache::Quasilinear { args }) => {
                let range = q.structure.range(k);
                let mut acc = 0.0;
                for &t in &q.incidence[k] {
                    let term = &q.terms[t];
                    let mut dz = 0.0;
                    for (idx, c) in &term.coeffs {
                        if range.contains(idx) {
                            dz += c * delta[idx - range.start];
                        }
                    }
                    acc += term.weight * ((q.curve.value)(args[t] + dz) - (q.curve.value)(args[t]));
                }
                acc
            }
            _ => unreachable!("cache kind matches smooth part"),
        }
    }

    /// Refresh the cache after block `k` moved by `delta`.
    pub fn commit_update(&self, cache: &mut SmoothCache, k: usize, delta: &[f64]) {
        match (self, cache) {
            (SmoothPart::Quadratic(q), SmoothCache::Quadratic { residual }) => {
                // Column k of A is the transpose of row k by symmetry.
                for (j, blk) in q.matrix.row(k) {
                    let range = q.matrix.structure().range(*j);
                    blk.matvec_t_acc(delta, &mut residual.as_mut_slice()[range]);
                }
            }
            (SmoothPart::Quasilinear(q), SmoothCache::Quasilinear { args }) => {
                let range = q.structure.range(k);
                for &t in &q.incidence[k] {
                    let term = &q.terms[t];
                    let mut dz = 0.0;
                    for (idx, c) in &term.coeffs {
                        if range.contains(idx) {
                            dz += c * delta[idx - range.start];
                        }
                    }
                    args[t] += dz;
                }
            }
            _ => unreachable!("cache kind matches smooth part"),
        }
    }

    /// `J0(v + t P_k d) - J0(v)` for a direction `d` inside block `k`.
    pub fn local_dir_delta(&self, cache: &SmoothCache, k: usize, d: &[f64], t: f64) -> f64 {
        match (self, cache) {
            (SmoothPart::Quadratic(q), SmoothCache::Quadratic { residual }) => {
                let akk = q.matrix.diag_block(k);
                let mut acc = 0.5 * t * t * akk.bilinear(d, d);
                for (r, di) in residual.block(k).iter().zip(d) {
                    acc += t * r * di;
                }
                acc
            }
            (SmoothPart::Quasilinear(q), SmoothCache::Quasilinear { args }) => {
                let range = q.structure.range(k);
                let mut acc = 0.0;
                for &ti in &q.incidence[k] {
                    let term = &q.terms[ti];
                    let mut dz = 0.0;
                    for (idx, c) in &term.coeffs {
                        if range.contains(idx) {
                            dz += c * d[idx - range.start];
                        }
                    }
                    acc += term.weight
                        * ((q.curve.value)(args[ti] + t * dz) - (q.curve.value)(args[ti]));
                }
                acc
            }
            _ => unreachable!("cache kind matches smooth part"),
        }
    }

    /// Derivative in `t` of `J0(v + t P_k d)` for a direction `d` inside
    /// block `k`.
    pub fn local_dir_deriv(&self, cache: &SmoothCache, k: usize, d: &[f64], t: f64) -> f64 {
        match (self, cache) {
            (SmoothPart::Quadratic(q), SmoothCache::Quadratic { residual }) => {
                let akk = q.matrix.diag_block(k);
                let mut acc = t * akk.bilinear(d, d);
                for (r, di) in residual.block(k).iter().zip(d) {
                    acc += r * di;
                }
                acc
            }
            (SmoothPart::Quasilinear(q), SmoothCache::Quasilinear { args }) => {
                let range = q.structure.range(k);
                let mut acc = 0.0;
                for &ti in &q.incidence[k] {
                    let term = &q.terms[ti];
                    let mut dz = 0.0;
                    for (idx, c) in &term.coeffs {
                        if range.contains(idx) {
                            dz += c * d[idx - range.start];
                        }
                    }
                    acc += term.weight * (q.curve.deriv)(args[ti] + t * dz) * dz;
                }
                acc
            }
            _ => unreachable!("cache kind matches smooth part"),
        }
    }

    /// Slope of `t -> J0(v + P_k (shift + t dir))` at `t = 0`.
    pub fn local_shifted_dir_deriv(
        &self,
        cache: &SmoothCache,
        k: usize,
        shift: &[f64],
        dir: &[f64],
    ) -> f64 {
        match (self, cache) {
            (SmoothPart::Quadratic(q), SmoothCache::Quadratic { residual }) => {
                let akk = q.matrix.diag_block(k);
                let mut acc = akk.bilinear(dir, shift);
                for (r, di) in residual.block(k).iter().zip(dir) {
                    acc += r * di;
                }
                acc
            }
            (SmoothPart::Quasilinear(q), SmoothCache::Quasilinear { args }) => {
                let range = q.structure.range(k);
                let mut acc = 0.0;
                for &ti in &q.incidence[k] {
                    let term = &q.terms[ti];
                    let mut dz_shift = 0.0;
                    let mut dz_dir = 0.0;
                    for (idx, c) in &term.coeffs {
                        if range.contains(idx) {
                            dz_shift += c * shift[idx - range.start];
                            dz_dir += c * dir[idx - range.start];
                        }
                    }
                    acc += term.weight * (q.curve.deriv)(args[ti] + dz_shift) * dz_dir;
                }
                acc
            }
            _ => unreachable!("cache kind matches smooth part"),
        }
    }

    /// Hessian block `(k,k)` of `J0` at the cached point.
    pub fn diag_block(&self, cache: &SmoothCache, k: usize) -> DenseBlock {
        match (self, cache) {
            (SmoothPart::Quadratic(q), _) => q.matrix.diag_block(k).clone(),
            (SmoothPart::Quasilinear(q), SmoothCache::Quasilinear { args }) => {
                self.local_weighted_outer(q, k, |t| q.terms[t].weight * (q.curve.second)(args[t]))
            }
            _ => unreachable!("cache kind matches smooth part"),
        }
    }

    /// Symmetric PSD block dominating the curvature of the restriction of
    /// `J0` to block `k`: the Gershgorin bound of `A_kk` times the identity
    /// for quadratic parts, the restricted Lipschitz matrix
    /// `sum_i L w_i d_i d_i^T` for quasilinear parts.
    pub fn curvature_block(&self, k: usize) -> DenseBlock {
        match self {
            SmoothPart::Quadratic(q) => {
                let akk = q.matrix.diag_block(k);
                DenseBlock::scaled_identity(akk.nrows(), akk.gershgorin_max())
            }
            SmoothPart::Quasilinear(q) => {
                self.local_weighted_outer(q, k, |t| q.terms[t].weight * q.curvature_bound)
            }
        }
    }

    fn local_weighted_outer(
        &self,
        q: &QuasilinearPart,
        k: usize,
        scale: impl Fn(usize) -> f64,
    ) -> DenseBlock {
        let range = q.structure.range(k);
        let n = range.len();
        let mut b = DenseBlock::zeros(n, n);
        for &t in &q.incidence[k] {
            let s = scale(t);
            let local: Vec<(usize, f64)> = q.terms[t]
                .coeffs
                .iter()
                .filter(|(idx, _)| range.contains(idx))
                .map(|(idx, c)| (idx - range.start, *c))
                .collect();
            for (i1, c1) in &local {
                for (i2, c2) in &local {
                    b.add(*i1, *i2, s * c1 * c2);
                }
            }
        }
        b
    }
}

/// Block-separable nonsmooth functional `J = J0 + sum_k phi_k`.
#[derive(Debug, Clone)]
pub struct SeparableFunctional {
    structure: Arc<BlockStructure>,
    smooth: SmoothPart,
    terms: Vec<NonsmoothTerm>,
}

impl SeparableFunctional {
    pub fn new(smooth: SmoothPart, terms: Vec<NonsmoothTerm>) -> Result<Self> {
        let structure = Arc::clone(smooth.structure());
        if terms.len() != structure.num_blocks() {
            return Err(Error::usage(format!(
                "expected {} nonsmooth terms, got {}",
                structure.num_blocks(),
                terms.len()
            )));
        }
        for (k, term) in terms.iter().enumerate() {
            if let Some(d) = term.dim() {
                if d != structure.size(k) {
                    return Err(Error::usage(format!(
                        "nonsmooth term {k} has dimension {d}, block has size {}",
                        structure.size(k)
                    )));
                }
            }
        }
        Ok(SeparableFunctional {
            structure,
            smooth,
            terms,
        })
    }

    pub fn structure(&self) -> &Arc<BlockStructure> {
        &self.structure
    }

    pub fn smooth(&self) -> &SmoothPart {
        &self.smooth
    }

    pub fn term(&self, k: usize) -> &NonsmoothTerm {
        &self.terms[k]
    }

    pub fn terms(&self) -> &[NonsmoothTerm] {
        &self.terms
    }

    /// Sum of the nonsmooth terms; infinite as soon as one block is
    /// infeasible.
    pub fn phi_value(&self, v: &BlockVector) -> Energy {
        let mut acc = 0.0;
        for (k, term) in self.terms.iter().enumerate() {
            match term.value(v.block(k)) {
                Energy::Finite(p) => acc += p,
                Energy::Infinite => return Energy::Infinite,
            }
        }
        Energy::Finite(acc)
    }

    /// `J(v)`. Infinite exactly when some block violates its `phi_k` domain;
    /// a non-finite smooth part at a feasible point is a numeric error.
    pub fn evaluate(&self, v: &BlockVector) -> Result<Energy> {
        if !v.matches(&self.structure) {
            return Err(Error::usage("evaluate: vector structure mismatch"));
        }
        let phi = match self.phi_value(v) {
            Energy::Finite(p) => p,
            Energy::Infinite => return Ok(Energy::Infinite),
        };
        let smooth = self.smooth.value(v);
        if !smooth.is_finite() {
            return Err(Error::numeric("evaluate: non-finite smooth part"));
        }
        Ok(Energy::Finite(smooth + phi))
    }

    /// Gradient of the smooth part `J0` only; derivatives of the nonsmooth
    /// terms on the truncated subspace are added by the truncation stage.
    pub fn gradient(&self, v: &BlockVector) -> Result<BlockVector> {
        if !v.matches(&self.structure) {
            return Err(Error::usage("gradient: vector structure mismatch"));
        }
        let g = self.smooth.gradient(v);
        if !g.is_finite() {
            return Err(Error::numeric("gradient: non-finite entries"));
        }
        Ok(g)
    }

    /// Hessian of the smooth part `J0` only.
    pub fn hessian(&self, v: &BlockVector) -> Result<BlockSparseMatrix> {
        if !v.matches(&self.structure) {
            return Err(Error::usage("hessian: vector structure mismatch"));
        }
        let h = self.smooth.hessian(v)?;
        if !h.is_finite() {
            return Err(Error::numeric("hessian: non-finite entries"));
        }
        Ok(h)
    }

    pub fn is_feasible(&self, v: &BlockVector) -> bool {
        self.phi_value(v).is_finite()
    }

    /// Block-wise Euclidean projection onto `dom J`.
    pub fn project_feasible(&self, v: &BlockVector) -> BlockVector {
        let mut out = v.clone();
        for (k, term) in self.terms.iter().enumerate() {
            let projected = term.domain_project(v.block(k));
            out.block_mut(k).copy_from_slice(&projected);
        }
        out
    }
}
