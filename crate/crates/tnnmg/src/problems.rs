//! Builders for the shipped example problems on structured 1D/2D grids.
//!
//! Each builder returns the functional, a geometric grid hierarchy for the
//! multigrid correction, a feasible initial iterate, and the local solver the
//! family defaults to.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{BlockStructure, BlockVector};
use crate::error::{Error, Result};
use crate::functional::{
    DifferenceTerm, QuadraticPart, QuasilinearPart, ScalarFn, SeparableFunctional, SmoothPart,
};
use crate::linsolve::GridHierarchy;
use crate::matrix::{BlockSparseMatrix, DenseBlock, Prolongation};
use crate::nonsmooth::{simplex_project, Interval, NonsmoothTerm};
use crate::smoother::LocalSolverKind;

/// A ready-to-solve instance of one example family.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub name: String,
    pub functional: SeparableFunctional,
    pub hierarchy: GridHierarchy,
    pub initial: BlockVector,
    pub default_smoother: LocalSolverKind,
}

/// The shipped problem families, selectable by name from the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemFamily {
    Obstacle1d,
    Obstacle2d,
    Minsurf1d,
    Phasefield1d,
    Phasefield2d,
    Friction1d,
}

impl ProblemFamily {
    pub fn all() -> [ProblemFamily; 6] {
        [
            ProblemFamily::Obstacle1d,
            ProblemFamily::Obstacle2d,
            ProblemFamily::Minsurf1d,
            ProblemFamily::Phasefield1d,
            ProblemFamily::Phasefield2d,
            ProblemFamily::Friction1d,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProblemFamily::Obstacle1d => "obstacle1d",
            ProblemFamily::Obstacle2d => "obstacle2d",
            ProblemFamily::Minsurf1d => "minsurf1d",
            ProblemFamily::Phasefield1d => "phasefield1d",
            ProblemFamily::Phasefield2d => "phasefield2d",
            ProblemFamily::Friction1d => "friction1d",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::all().into_iter().find(|f| f.name() == name)
    }

    /// Build the family at `level` with its default parameters.
    pub fn build(&self, level: usize, seed: u64) -> Result<ProblemInstance> {
        match self {
            ProblemFamily::Obstacle1d => {
                build_obstacle_1d(level, Interval::new(-0.15, 0.15)?, -10.0)
            }
            ProblemFamily::Obstacle2d => {
                build_obstacle_2d(level, Interval::new(-0.15, 0.15)?, -10.0)
            }
            ProblemFamily::Minsurf1d => build_minsurf_box_1d(level),
            ProblemFamily::Phasefield1d => build_phasefield_simplex_1d(level, 3, seed),
            ProblemFamily::Phasefield2d => build_phasefield_simplex_2d(level, 3, seed),
            ProblemFamily::Friction1d => build_friction_norm_1d(level, 0.3),
        }
    }
}

fn check_level(level: usize) -> Result<()> {
    if level == 0 || level > 16 {
        return Err(Error::usage("level must lie in 1..=16"));
    }
    Ok(())
}

/// Interior nodes of the 1D unit-interval grid at `level`.
fn nodes_1d(level: usize) -> usize {
    (1usize << level) - 1
}

/// Linear interpolation weights from the 1D grid at `level - 1` to `level`,
/// acting node-wise on blocks of size `block`.
fn interpolation_1d(level: usize, block: usize) -> Result<Prolongation> {
    let fine_n = nodes_1d(level);
    let coarse_n = nodes_1d(level - 1);
    let fine = BlockStructure::uniform(fine_n, block);
    let coarse = BlockStructure::uniform(coarse_n, block);
    let mut rows = vec![Vec::new(); fine_n];
    for j in 0..coarse_n {
        rows[2 * j + 1].push((j, 1.0));
        rows[2 * j].push((j, 0.5));
        rows[2 * j + 2].push((j, 0.5));
    }
    Prolongation::new(&fine, &coarse, rows)
}

fn hierarchy_1d(level: usize, block: usize) -> Result<GridHierarchy> {
    let structures: Vec<Arc<BlockStructure>> = (1..=level)
        .map(|l| BlockStructure::uniform(nodes_1d(l), block))
        .collect();
    let prolongations: Result<Vec<Prolongation>> =
        (2..=level).map(|l| interpolation_1d(l, block)).collect();
    GridHierarchy::new(structures, prolongations?)
}

/// 1D interpolation weights of one coordinate direction on the structured
/// square grid: `(coarse index, weight)` pairs for fine index `i`.
fn line_weights(i: usize, coarse_side: usize) -> Vec<(usize, f64)> {
    if i % 2 == 1 {
        vec![((i - 1) / 2, 1.0)]
    } else {
        let mut w = Vec::new();
        let t = i / 2;
        if t >= 1 {
            w.push((t - 1, 0.5));
        }
        if t < coarse_side {
            w.push((t, 0.5));
        }
        w
    }
}

/// Bilinear interpolation from the square grid at `level - 1` to `level`.
fn interpolation_2d(level: usize, block: usize) -> Result<Prolongation> {
    let fine_side = nodes_1d(level);
    let coarse_side = nodes_1d(level - 1);
    let fine = BlockStructure::uniform(fine_side * fine_side, block);
    let coarse = BlockStructure::uniform(coarse_side * coarse_side, block);
    let mut rows = vec![Vec::new(); fine_side * fine_side];
    for iy in 0..fine_side {
        let wy = line_weights(iy, coarse_side);
        for ix in 0..fine_side {
            let wx = line_weights(ix, coarse_side);
            let row = &mut rows[iy * fine_side + ix];
            for (jy, vy) in &wy {
                for (jx, vx) in &wx {
                    row.push((jy * coarse_side + jx, vy * vx));
                }
            }
        }
    }
    Prolongation::new(&fine, &coarse, rows)
}

fn hierarchy_2d(level: usize, block: usize) -> Result<GridHierarchy> {
    let structures: Vec<Arc<BlockStructure>> = (1..=level)
        .map(|l| {
            let side = nodes_1d(l);
            BlockStructure::uniform(side * side, block)
        })
        .collect();
    let prolongations: Result<Vec<Prolongation>> =
        (2..=level).map(|l| interpolation_2d(l, block)).collect();
    GridHierarchy::new(structures, prolongations?)
}

/// 1D P1 stiffness matrix `(1/h) tridiag(-1, 2, -1)` acting block-wise on
/// blocks of size `block`, with `shift` added to the diagonal.
fn laplacian_1d_blocks(
    structure: &Arc<BlockStructure>,
    h: f64,
    block: usize,
    shift: f64,
) -> Result<BlockSparseMatrix> {
    let m = structure.num_blocks();
    let mut builder = BlockSparseMatrix::builder(structure);
    let diag = DenseBlock::scaled_identity(block, 2.0 / h + shift);
    let off = DenseBlock::scaled_identity(block, -1.0 / h);
    for i in 0..m {
        builder.add_block(i, i, diag.clone());
        if i + 1 < m {
            builder.add_block(i, i + 1, off.clone());
            builder.add_block(i + 1, i, off.clone());
        }
    }
    builder.build()
}

/// 2D five-point stencil `(4, -1)` (scale free) on the structured square
/// grid, acting block-wise, with `shift` added to the diagonal.
fn laplacian_2d_blocks(
    structure: &Arc<BlockStructure>,
    side: usize,
    block: usize,
    shift: f64,
) -> Result<BlockSparseMatrix> {
    let mut builder = BlockSparseMatrix::builder(structure);
    let diag = DenseBlock::scaled_identity(block, 4.0 + shift);
    let off = DenseBlock::scaled_identity(block, -1.0);
    for iy in 0..side {
        for ix in 0..side {
            let i = iy * side + ix;
            builder.add_block(i, i, diag.clone());
            if ix + 1 < side {
                builder.add_block(i, i + 1, off.clone());
                builder.add_block(i + 1, i, off.clone());
            }
            if iy + 1 < side {
                let j = (iy + 1) * side + ix;
                builder.add_block(i, j, off.clone());
                builder.add_block(j, i, off.clone());
            }
        }
    }
    builder.build()
}

/// Obstacle problem on the 1D unit interval: `J0 = 1/2 <Av,v> - <b,v>` with
/// the P1 Laplacian, load `b_k = h * load`, and interval bounds per node.
pub fn build_obstacle_1d(level: usize, bounds: Interval, load: f64) -> Result<ProblemInstance> {
    check_level(level)?;
    let n = nodes_1d(level);
    let h = 1.0 / (n as f64 + 1.0);
    let structure = BlockStructure::scalar(n);
    let a = laplacian_1d_blocks(&structure, h, 1, 0.0)?;
    let b = BlockVector::from_vec(&structure, vec![h * load; n])?;
    let functional = SeparableFunctional::new(
        SmoothPart::Quadratic(QuadraticPart::new(a, b)?),
        vec![NonsmoothTerm::Interval(bounds); n],
    )?;
    let initial = functional.project_feasible(&BlockVector::zeros(&structure));
    Ok(ProblemInstance {
        name: format!("obstacle1d(level={level})"),
        functional,
        hierarchy: hierarchy_1d(level, 1)?,
        initial,
        default_smoother: LocalSolverKind::ExactBisection,
    })
}

/// Obstacle problem on the unit square with the five-point stencil and load
/// `b_k = h^2 * load`.
pub fn build_obstacle_2d(level: usize, bounds: Interval, load: f64) -> Result<ProblemInstance> {
    check_level(level)?;
    let side = nodes_1d(level);
    let n = side * side;
    let h = 1.0 / (side as f64 + 1.0);
    let structure = BlockStructure::scalar(n);
    let a = laplacian_2d_blocks(&structure, side, 1, 0.0)?;
    let b = BlockVector::from_vec(&structure, vec![h * h * load; n])?;
    let functional = SeparableFunctional::new(
        SmoothPart::Quadratic(QuadraticPart::new(a, b)?),
        vec![NonsmoothTerm::Interval(bounds); n],
    )?;
    let initial = functional.project_feasible(&BlockVector::zeros(&structure));
    Ok(ProblemInstance {
        name: format!("obstacle2d(level={level})"),
        functional,
        hierarchy: hierarchy_2d(level, 1)?,
        initial,
        default_smoother: LocalSolverKind::ExactBisection,
    })
}

/// Discretized minimal-surface energy with box constraints:
/// `J0(v) = sum_i h * gamma((v_{i+1} - v_i)/h)` with `gamma(z) = sqrt(1+z^2)`,
/// boundary values 0 and 1 folded into the difference terms, and
/// `phi_k = chi_[0,1]`.
pub fn build_minsurf_box_1d(level: usize) -> Result<ProblemInstance> {
    check_level(level)?;
    let n = nodes_1d(level);
    let h = 1.0 / (n as f64 + 1.0);
    let structure = BlockStructure::scalar(n);
    let mut terms = Vec::with_capacity(n + 1);
    for cell in 0..=n {
        let mut coeffs = Vec::new();
        if cell < n {
            coeffs.push((cell, 1.0 / h));
        }
        if cell > 0 {
            coeffs.push((cell - 1, -1.0 / h));
        }
        // Left boundary value 0, right boundary value 1.
        let shift = if cell == n { 1.0 / h } else { 0.0 };
        terms.push(DifferenceTerm {
            coeffs,
            shift,
            weight: h,
        });
    }
    let quasi = QuasilinearPart::new(&structure, terms, ScalarFn::minimal_surface(), 1.0)?;
    let functional = SeparableFunctional::new(
        SmoothPart::Quasilinear(quasi),
        vec![NonsmoothTerm::interval(0.0, 1.0)?; n],
    )?;
    let initial = BlockVector::zeros(&structure);
    Ok(ProblemInstance {
        name: format!("minsurf1d(level={level})"),
        functional,
        hierarchy: hierarchy_1d(level, 1)?,
        initial,
        default_smoother: LocalSolverKind::DominatingModel,
    })
}

/// Multi-component phase field with Gibbs-simplex constraints per node:
/// `J0 = 1/2 <(A_lap (x) I_L + c I) v, v> - <b, v>` with `c = 1` and a
/// seeded random load.
pub fn build_phasefield_simplex_1d(level: usize, l: usize, seed: u64) -> Result<ProblemInstance> {
    check_level(level)?;
    if l < 2 {
        return Err(Error::usage("phase-field component count must be >= 2"));
    }
    let m = nodes_1d(level);
    let h = 1.0 / (m as f64 + 1.0);
    let structure = BlockStructure::uniform(m, l);
    let a = laplacian_1d_blocks(&structure, h, l, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = BlockVector::from_vec(
        &structure,
        (0..m * l).map(|_| h * rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let functional = SeparableFunctional::new(
        SmoothPart::Quadratic(QuadraticPart::new(a, b)?),
        vec![NonsmoothTerm::simplex(l)?; m],
    )?;
    let initial = random_simplex_iterate(&structure, l, &mut rng)?;
    Ok(ProblemInstance {
        name: format!("phasefield1d(level={level}, components={l})"),
        functional,
        hierarchy: hierarchy_1d(level, l)?,
        initial,
        default_smoother: LocalSolverKind::PolyhedralGs,
    })
}

/// 2D variant of the simplex-constrained phase field on the unit square.
pub fn build_phasefield_simplex_2d(level: usize, l: usize, seed: u64) -> Result<ProblemInstance> {
    check_level(level)?;
    if l < 2 {
        return Err(Error::usage("phase-field component count must be >= 2"));
    }
    let side = nodes_1d(level);
    let m = side * side;
    let h = 1.0 / (side as f64 + 1.0);
    let structure = BlockStructure::uniform(m, l);
    let a = laplacian_2d_blocks(&structure, side, l, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = BlockVector::from_vec(
        &structure,
        (0..m * l)
            .map(|_| h * h * rng.gen_range(-1.0..1.0))
            .collect(),
    )?;
    let functional = SeparableFunctional::new(
        SmoothPart::Quadratic(QuadraticPart::new(a, b)?),
        vec![NonsmoothTerm::simplex(l)?; m],
    )?;
    let initial = random_simplex_iterate(&structure, l, &mut rng)?;
    Ok(ProblemInstance {
        name: format!("phasefield2d(level={level}, components={l})"),
        functional,
        hierarchy: hierarchy_2d(level, l)?,
        initial,
        default_smoother: LocalSolverKind::PolyhedralGs,
    })
}

fn random_simplex_iterate(
    structure: &Arc<BlockStructure>,
    l: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BlockVector> {
    let mut initial = BlockVector::zeros(structure);
    for k in 0..structure.num_blocks() {
        let raw: Vec<f64> = (0..l).map(|_| rng.gen_range(0.0..1.0)).collect();
        initial.block_mut(k).copy_from_slice(&simplex_project(&raw));
    }
    Ok(initial)
}

/// Vector-valued problem with per-node Euclidean norm terms
/// `phi_k = omega ||v_k||`, the friction-type nonsmoothness. Smooth part is
/// the block Laplacian with a smooth deterministic load.
pub fn build_friction_norm_1d(level: usize, omega: f64) -> Result<ProblemInstance> {
    check_level(level)?;
    if !omega.is_finite() || omega < 0.0 {
        return Err(Error::usage("friction weight must be nonnegative"));
    }
    let m = nodes_1d(level);
    let h = 1.0 / (m as f64 + 1.0);
    let structure = BlockStructure::uniform(m, 2);
    let a = laplacian_1d_blocks(&structure, h, 2, 0.0)?;
    let mut load = Vec::with_capacity(2 * m);
    for node in 0..m {
        let x = (node as f64 + 1.0) * h;
        load.push(h * 10.0 * (2.0 * std::f64::consts::PI * x).sin());
        load.push(h * 5.0 * (std::f64::consts::PI * x).cos());
    }
    let b = BlockVector::from_vec(&structure, load)?;
    let functional = SeparableFunctional::new(
        SmoothPart::Quadratic(QuadraticPart::new(a, b)?),
        vec![NonsmoothTerm::weighted_norm(omega)?; m],
    )?;
    let initial = BlockVector::zeros(&structure);
    Ok(ProblemInstance {
        name: format!("friction1d(level={level}, omega={omega})"),
        functional,
        hierarchy: hierarchy_1d(level, 2)?,
        initial,
        default_smoother: LocalSolverKind::DominatingModel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    #[test]
    fn builders_produce_feasible_initials_and_spd_matrices() {
        for family in ProblemFamily::all() {
            let p = family.build(3, 0).unwrap();
            assert!(
                p.functional.is_feasible(&p.initial),
                "{} initial iterate infeasible",
                p.name
            );
            let e = p.functional.evaluate(&p.initial).unwrap();
            assert!(e.is_finite(), "{} initial energy infinite", p.name);
            // Smallest eigenvalue of the smooth Hessian at the initial
            // iterate must be positive.
            let h = p.functional.hessian(&p.initial).unwrap();
            let eig = SymmetricEigen::new(h.to_dense());
            let min = eig
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            assert!(min > 0.0, "{}: smallest eigenvalue {min}", p.name);
            // Hierarchy finest level matches the functional.
            assert_eq!(
                p.hierarchy.finest_structure().total_dim(),
                p.functional.structure().total_dim()
            );
        }
    }

    #[test]
    fn obstacle_single_node_clamps_to_bound() {
        // One unknown: the unconstrained minimizer b/a lies well below the
        // lower bound and must clamp onto it.
        let p = build_obstacle_1d(1, Interval::new(-0.15, 0.15).unwrap(), -10.0).unwrap();
        let f = &p.functional;
        assert_eq!(f.structure().total_dim(), 1);
        let a = f.hessian(&p.initial).unwrap().diag_block(0).get(0, 0);
        let g0 = f.gradient(&BlockVector::zeros(f.structure())).unwrap();
        let unconstrained = -g0.as_slice()[0] / a;
        assert!(unconstrained < -0.15);
        let minimizer = f.term(0).domain_project(&[unconstrained]);
        assert_eq!(minimizer[0], -0.15);
    }

    #[test]
    fn obstacle_zero_load_is_trivial() {
        let p = build_obstacle_1d(3, Interval::new(-0.15, 0.15).unwrap(), 0.0).unwrap();
        // Zero is feasible and is the unconstrained minimizer.
        let g = p.functional.gradient(&p.initial).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn invalid_bounds_are_rejected() {
        assert!(Interval::new(0.2, -0.2).is_err());
    }

    #[test]
    fn phasefield_blocks_sum_to_one() {
        let p = build_phasefield_simplex_1d(3, 3, 42).unwrap();
        for k in 0..p.functional.structure().num_blocks() {
            let s: f64 = p.initial.block(k).iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn seeded_builders_are_deterministic() {
        let a = build_phasefield_simplex_1d(3, 3, 7).unwrap();
        let b = build_phasefield_simplex_1d(3, 3, 7).unwrap();
        assert_eq!(a.initial.as_slice(), b.initial.as_slice());
        let c = build_phasefield_simplex_1d(3, 3, 8).unwrap();
        assert_ne!(a.initial.as_slice(), c.initial.as_slice());
    }
}
