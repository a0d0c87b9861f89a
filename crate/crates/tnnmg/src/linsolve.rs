//! Inexact linear solvers for the truncated Newton correction system.
//!
//! Truncation leaves the Hessian symmetric positive semi-definite, so every
//! solver here is kernel-invariant: corrections contain no component that the
//! operator annihilates. The default is one V-cycle of geometric multigrid
//! with semi-definite-tolerant block Gauss--Seidel smoothing; a plain CG and
//! a dense pseudo-inverse are available as alternatives and as cross checks.

use std::sync::Arc;

use nalgebra::SymmetricEigen;

use crate::blocks::{BlockStructure, BlockVector};
use crate::error::{Error, Result};
use crate::matrix::{BlockSparseMatrix, DenseBlock, Prolongation};
use crate::truncation::TruncationPattern;

/// Nested grid levels (coarsest first) with their transfer operators.
#[derive(Debug, Clone)]
pub struct GridHierarchy {
    structures: Vec<Arc<BlockStructure>>,
    prolongations: Vec<Prolongation>,
}

impl GridHierarchy {
    pub fn new(
        structures: Vec<Arc<BlockStructure>>,
        prolongations: Vec<Prolongation>,
    ) -> Result<Self> {
        if structures.is_empty() {
            return Err(Error::usage("hierarchy needs at least one level"));
        }
        if prolongations.len() + 1 != structures.len() {
            return Err(Error::usage(
                "hierarchy needs one prolongation per level pair",
            ));
        }
        for (i, p) in prolongations.iter().enumerate() {
            if **p.coarse_structure() != *structures[i]
                || **p.fine_structure() != *structures[i + 1]
            {
                return Err(Error::usage(format!(
                    "prolongation {i} does not match its levels"
                )));
            }
        }
        Ok(GridHierarchy {
            structures,
            prolongations,
        })
    }

    pub fn single_level(structure: &Arc<BlockStructure>) -> Self {
        GridHierarchy {
            structures: vec![Arc::clone(structure)],
            prolongations: Vec::new(),
        }
    }

    pub fn num_levels(&self) -> usize {
        self.structures.len()
    }

    pub fn structure(&self, level: usize) -> &Arc<BlockStructure> {
        &self.structures[level]
    }

    pub fn finest_structure(&self) -> &Arc<BlockStructure> {
        self.structures.last().unwrap()
    }

    /// Prolongation from `level` to `level + 1`.
    pub fn prolongation(&self, level: usize) -> &Prolongation {
        &self.prolongations[level]
    }

    /// Galerkin stack `A_{k-1} = P_k^T A_k P_k` starting from the finest
    /// matrix; returned coarsest first.
    pub fn galerkin_matrices(&self, finest: &BlockSparseMatrix) -> Result<Vec<BlockSparseMatrix>> {
        if **finest.structure() != **self.finest_structure() {
            return Err(Error::usage("galerkin stack: finest structure mismatch"));
        }
        let levels = self.num_levels();
        let mut mats = vec![finest.clone()];
        for level in (0..levels - 1).rev() {
            let coarse = self.prolongations[level].galerkin(mats.last().unwrap())?;
            mats.push(coarse);
        }
        mats.reverse();
        Ok(mats)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearSolverKind {
    VCycle,
    Cg,
    DensePseudoInverse,
}

#[derive(Debug, Clone)]
pub struct LinearSolverConfig {
    pub kind: LinearSolverKind,
    pub pre_smooth: usize,
    pub post_smooth: usize,
    /// Diagonal regularization of the semi-definite smoother.
    pub alpha: f64,
    /// Relative eigenvalue cutoff of the dense pseudo-inverse.
    pub coarse_cutoff: f64,
    /// Largest dimension the dense solver accepts.
    pub dense_cap: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// V-cycles per correction solve.
    pub cycles: usize,
}

impl Default for LinearSolverConfig {
    fn default() -> Self {
        LinearSolverConfig {
            kind: LinearSolverKind::VCycle,
            pre_smooth: 1,
            post_smooth: 1,
            alpha: 1e-8,
            coarse_cutoff: 1e-12,
            dense_cap: 2000,
            cg_tol: 1e-10,
            cg_max_iter: 500,
            cycles: 1,
        }
    }
}

impl LinearSolverConfig {
    /// Non-fatal configuration warnings.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.alpha < 1e-14 || self.alpha > 1e-4 {
            out.push(format!(
                "smoother regularization alpha = {:.1e} outside the robust range [1e-14, 1e-4]",
                self.alpha
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepDirection {
    Forward,
    Backward,
}

/// One block Gauss--Seidel sweep for the semi-definite system `A v = r`,
/// starting from zero.
///
/// Diagonal blocks are regularized: zero diagonal entries become `alpha`,
/// nonzero ones are scaled by `1 + alpha`, off-diagonal entries stay. Blocks
/// whose diagonal is entirely zero are skipped and return a zero correction,
/// which keeps the sweep invariant under residual components in the kernel.
pub fn semidefinite_block_gs_sweep(
    a: &BlockSparseMatrix,
    r: &BlockVector,
    alpha: f64,
    direction: SweepDirection,
) -> Result<BlockVector> {
    if !r.matches(a.structure()) {
        return Err(Error::usage("gs sweep: structure mismatch"));
    }
    let m = a.structure().num_blocks();
    let mut v = BlockVector::zeros(a.structure());
    let order: Vec<usize> = match direction {
        SweepDirection::Forward => (0..m).collect(),
        SweepDirection::Backward => (0..m).rev().collect(),
    };
    let mut visited = vec![false; m];
    for &i in &order {
        let diag = a.diag_block(i);
        if diag.is_zero() {
            visited[i] = true;
            continue;
        }
        let mut rhs = r.block(i).to_vec();
        for (j, blk) in a.row(i) {
            if *j != i && visited[*j] {
                let vj = v.block(*j);
                for (row, rhs_entry) in rhs.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (col, vj_val) in vj.iter().enumerate() {
                        acc += blk.get(row, col) * vj_val;
                    }
                    *rhs_entry -= acc;
                }
            }
        }
        let reg = regularized_diagonal(diag, alpha);
        let x = reg.cholesky_solve(&rhs).ok_or_else(|| {
            Error::numeric(format!(
                "regularized diagonal block {i} is not positive definite"
            ))
        })?;
        v.block_mut(i).copy_from_slice(&x);
        visited[i] = true;
    }
    Ok(v)
}

fn regularized_diagonal(diag: &DenseBlock, alpha: f64) -> DenseBlock {
    let n = diag.nrows();
    let mut reg = diag.clone();
    for l in 0..n {
        let d = diag.get(l, l);
        if d == 0.0 {
            reg.set(l, l, alpha);
        } else {
            reg.set(l, l, (1.0 + alpha) * d);
        }
    }
    reg
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub v: BlockVector,
    pub converged: bool,
    pub iterations: usize,
}

/// Conjugate gradients from a zero start for symmetric positive
/// semi-definite `A` with `r` in the range of `A`. Iterates stay in the
/// range by construction.
pub fn cg_solve(
    a: &BlockSparseMatrix,
    r: &BlockVector,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    if !r.matches(a.structure()) {
        return Err(Error::usage("cg: structure mismatch"));
    }
    let mut x = BlockVector::zeros(a.structure());
    let mut res = r.clone();
    let r0_norm = res.norm();
    if r0_norm == 0.0 {
        return Ok(CgOutcome {
            v: x,
            converged: true,
            iterations: 0,
        });
    }
    let mut p = res.clone();
    let mut rho = res.dot(&res);
    let mut q = BlockVector::zeros(a.structure());
    for it in 0..max_iter {
        a.apply_into(&p, &mut q);
        let pq = p.dot(&q);
        if !pq.is_finite() || !rho.is_finite() {
            return Err(Error::numeric("cg: NaN breakdown"));
        }
        if pq <= 0.0 {
            // Search direction fell into the kernel (up to roundoff); the
            // current iterate is the best range-space answer.
            let converged = res.norm() <= tol * r0_norm;
            return Ok(CgOutcome {
                v: x,
                converged,
                iterations: it,
            });
        }
        let step = rho / pq;
        x.axpy(step, &p);
        res.axpy(-step, &q);
        let rho_new = res.dot(&res);
        if rho_new.sqrt() <= tol * r0_norm {
            return Ok(CgOutcome {
                v: x,
                converged: true,
                iterations: it + 1,
            });
        }
        let beta = rho_new / rho;
        rho = rho_new;
        let mut p_next = res.clone();
        p_next.axpy(beta, &p);
        p = p_next;
    }
    Ok(CgOutcome {
        v: x,
        converged: false,
        iterations: max_iter,
    })
}

/// Minimum-norm solution `A^+ r` via a symmetric eigendecomposition.
/// Eigenvalues below `cutoff * lambda_max` are treated as zero.
pub fn dense_pseudoinverse_solve(
    a: &BlockSparseMatrix,
    r: &BlockVector,
    cutoff: f64,
    cap: usize,
) -> Result<BlockVector> {
    if !r.matches(a.structure()) {
        return Err(Error::usage("pseudo-inverse: structure mismatch"));
    }
    let n = a.structure().total_dim();
    if n > cap {
        return Err(Error::usage(format!(
            "pseudo-inverse: dimension {n} exceeds the dense cap {cap}"
        )));
    }
    let eig = SymmetricEigen::new(a.to_dense());
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let mut out = BlockVector::zeros(a.structure());
    if lambda_max == 0.0 {
        return Ok(out);
    }
    let rhs = nalgebra::DVector::from_column_slice(r.as_slice());
    let coeffs = eig.eigenvectors.transpose() * rhs;
    let mut acc = nalgebra::DVector::zeros(n);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cutoff * lambda_max {
            acc += eig.eigenvectors.column(i) * (coeffs[i] / l);
        }
    }
    out.as_mut_slice().copy_from_slice(acc.as_slice());
    Ok(out)
}

/// One V-cycle pass (repeated `cfg.cycles` times) for `A v = r` on the
/// hierarchy, followed by the projection onto the correction space that
/// removes spurious kernel contributions introduced by the prolongations.
pub fn vcycle(
    hier: &GridHierarchy,
    a_finest: &BlockSparseMatrix,
    r: &BlockVector,
    pattern: &TruncationPattern,
    cfg: &LinearSolverConfig,
) -> Result<BlockVector> {
    if !r.matches(a_finest.structure()) {
        return Err(Error::usage("vcycle: structure mismatch"));
    }
    let mats = hier.galerkin_matrices(a_finest)?;
    let finest = mats.len() - 1;
    let mut v = BlockVector::zeros(a_finest.structure());
    for cycle in 0..cfg.cycles.max(1) {
        let rhs = if cycle == 0 {
            r.clone()
        } else {
            let mut res = r.clone();
            res.axpy(-1.0, &a_finest.apply(&v)?);
            res
        };
        let delta = vcycle_level(hier, &mats, finest, &rhs, cfg)?;
        v.axpy(1.0, &delta);
    }
    Ok(pattern.project(&v))
}

fn vcycle_level(
    hier: &GridHierarchy,
    mats: &[BlockSparseMatrix],
    level: usize,
    rhs: &BlockVector,
    cfg: &LinearSolverConfig,
) -> Result<BlockVector> {
    let a = &mats[level];
    if level == 0 {
        return dense_pseudoinverse_solve(a, rhs, cfg.coarse_cutoff, cfg.dense_cap);
    }
    let mut v = BlockVector::zeros(a.structure());
    let mut residual = rhs.clone();
    for step in 0..cfg.pre_smooth {
        if step > 0 {
            residual = rhs.clone();
            residual.axpy(-1.0, &a.apply(&v)?);
        }
        let delta = semidefinite_block_gs_sweep(a, &residual, cfg.alpha, SweepDirection::Forward)?;
        v.axpy(1.0, &delta);
    }
    residual = rhs.clone();
    residual.axpy(-1.0, &a.apply(&v)?);
    let p = hier.prolongation(level - 1);
    let coarse_rhs = p.restrict(&residual)?;
    let coarse_v = vcycle_level(hier, mats, level - 1, &coarse_rhs, cfg)?;
    v.axpy(1.0, &p.prolong(&coarse_v)?);
    for _ in 0..cfg.post_smooth {
        residual = rhs.clone();
        residual.axpy(-1.0, &a.apply(&v)?);
        let delta = semidefinite_block_gs_sweep(a, &residual, cfg.alpha, SweepDirection::Backward)?;
        v.axpy(1.0, &delta);
    }
    Ok(v)
}

/// Inexact solve of the correction equation `H v = -g` with the configured
/// backend, projected onto the correction space and checked for descent
/// compatibility.
pub fn solve_correction(
    hier: &GridHierarchy,
    h: &BlockSparseMatrix,
    g: &BlockVector,
    pattern: &TruncationPattern,
    cfg: &LinearSolverConfig,
) -> Result<BlockVector> {
    let mut r = g.clone();
    r.scale(-1.0);
    let v = match cfg.kind {
        LinearSolverKind::VCycle => vcycle(hier, h, &r, pattern, cfg)?,
        LinearSolverKind::Cg => {
            let out = cg_solve(h, &r, cfg.cg_tol, cfg.cg_max_iter)?;
            pattern.project(&out.v)
        }
        LinearSolverKind::DensePseudoInverse => {
            let out = dense_pseudoinverse_solve(h, &r, cfg.coarse_cutoff, cfg.dense_cap)?;
            pattern.project(&out)
        }
    };
    let descent = g.dot(&v);
    if descent > 1e-10 * (1.0 + g.norm() * v.norm()) {
        return Err(Error::internal(format!(
            "linear correction is not descent-compatible: <g, v> = {descent:.3e}"
        )));
    }
    Ok(v)
}
