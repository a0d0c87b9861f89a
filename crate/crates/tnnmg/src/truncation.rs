//! Truncated derivatives: the subspace where the energy is locally `C²`,
//! its block-diagonal projection, and the projected gradient and Hessian
//! that define the Newton correction problem.

use std::sync::Arc;

use crate::blocks::{BlockStructure, BlockVector};
use crate::error::{Error, Result};
use crate::functional::SeparableFunctional;
use crate::matrix::{BlockSparseMatrix, DenseBlock};
use crate::nonsmooth::{ActiveSet, BlockPattern};

/// Per-block smoothness subspaces with their orthogonal projections.
#[derive(Debug, Clone)]
pub struct TruncationPattern {
    structure: Arc<BlockStructure>,
    blocks: Vec<BlockPattern>,
    projections: Vec<DenseBlock>,
    active_sets: Vec<ActiveSet>,
}

impl TruncationPattern {
    /// Pattern with every block untruncated (identity projection).
    pub fn full(structure: &Arc<BlockStructure>) -> Self {
        let m = structure.num_blocks();
        TruncationPattern {
            structure: Arc::clone(structure),
            blocks: vec![BlockPattern::Full; m],
            projections: (0..m)
                .map(|k| DenseBlock::identity(structure.size(k)))
                .collect(),
            active_sets: Vec::new(),
        }
    }

    pub fn structure(&self) -> &Arc<BlockStructure> {
        &self.structure
    }

    pub fn block_pattern(&self, k: usize) -> &BlockPattern {
        &self.blocks[k]
    }

    /// Dense projection block onto the subspace of block `k`.
    pub fn projection_block(&self, k: usize) -> &DenseBlock {
        &self.projections[k]
    }

    /// Blocks with at least one active constraint.
    pub fn active_sets(&self) -> &[ActiveSet] {
        &self.active_sets
    }

    /// Dimension of the overall correction space.
    pub fn free_dimension(&self) -> usize {
        self.blocks
            .iter()
            .enumerate()
            .map(|(k, p)| p.free_dim(self.structure.size(k)))
            .sum()
    }

    /// Fraction of coefficients removed by the truncation.
    pub fn truncated_fraction(&self) -> f64 {
        let n = self.structure.total_dim();
        (n - self.free_dimension()) as f64 / n as f64
    }

    pub fn is_all_full(&self) -> bool {
        self.blocks.iter().all(|p| p.is_full())
    }

    /// Block-wise application of the projection.
    pub fn project(&self, v: &BlockVector) -> BlockVector {
        let mut out = v.clone();
        self.project_in_place(&mut out);
        out
    }

    pub fn project_in_place(&self, v: &mut BlockVector) {
        for (k, pattern) in self.blocks.iter().enumerate() {
            match pattern {
                BlockPattern::Full => {}
                BlockPattern::Empty => v.block_mut(k).fill(0.0),
                _ => {
                    let p = &self.projections[k];
                    let x = v.block(k).to_vec();
                    let out = v.block_mut(k);
                    out.fill(0.0);
                    p.matvec_acc(&x, out);
                }
            }
        }
    }
}

/// Build the truncation pattern at the (feasible) iterate `u` with activity
/// tolerance `eps` and curvature cap `cap`.
pub fn build_pattern(
    f: &SeparableFunctional,
    u: &BlockVector,
    eps: f64,
    cap: f64,
) -> Result<TruncationPattern> {
    if !u.matches(f.structure()) {
        return Err(Error::usage("build_pattern: vector structure mismatch"));
    }
    let structure = Arc::clone(f.structure());
    let m = structure.num_blocks();
    let mut blocks = Vec::with_capacity(m);
    let mut projections = Vec::with_capacity(m);
    let mut active_sets = Vec::new();
    for k in 0..m {
        let term = f.term(k);
        let x = u.block(k);
        let pattern = term.truncation_pattern(x, eps, cap)?;
        let constraints = term.active_constraints(x, eps, cap)?;
        if !constraints.is_empty() {
            active_sets.push(ActiveSet {
                block: k,
                constraints,
            });
        }
        projections.push(pattern.projection(structure.size(k)));
        blocks.push(pattern);
    }
    Ok(TruncationPattern {
        structure,
        blocks,
        projections,
        active_sets,
    })
}

/// Projected gradient `g = P^T (J0'(u) + phi' on the pattern subspaces)`.
///
/// Entries outside the correction space are exactly zero.
pub fn truncated_gradient(
    f: &SeparableFunctional,
    u: &BlockVector,
    pattern: &TruncationPattern,
) -> Result<BlockVector> {
    let mut g = f.gradient(u)?;
    for k in 0..f.structure().num_blocks() {
        if let Some(contrib) = f
            .term(k)
            .gradient_contribution(u.block(k), pattern.block_pattern(k))
        {
            for (gi, ci) in g.block_mut(k).iter_mut().zip(&contrib) {
                *gi += ci;
            }
        }
    }
    pattern.project_in_place(&mut g);
    if !g.is_finite() {
        return Err(Error::numeric("truncated gradient has non-finite entries"));
    }
    Ok(g)
}

/// Projected Hessian `H = P^T (J0''(u) + phi'') P`, block by block, with the
/// sparsity pattern of `J0''(u)`.
pub fn truncated_hessian(
    f: &SeparableFunctional,
    u: &BlockVector,
    pattern: &TruncationPattern,
) -> Result<BlockSparseMatrix> {
    let h = f.hessian(u)?;
    let mut builder = BlockSparseMatrix::builder(f.structure());
    for (i, j, block) in h.entries() {
        let mut modified;
        let block_ref = if i == j {
            if let Some(contrib) = f
                .term(i)
                .hessian_contribution(u.block(i), pattern.block_pattern(i))
            {
                modified = block.clone();
                modified.add_scaled(1.0, &contrib);
                &modified
            } else {
                block
            }
        } else {
            block
        };
        let pi_full = pattern.block_pattern(i).is_full();
        let pj_full = pattern.block_pattern(j).is_full();
        let truncated = if pi_full && pj_full {
            block_ref.clone()
        } else {
            block_ref.sandwich(pattern.projection_block(i), pattern.projection_block(j))
        };
        builder.add_block(i, j, truncated);
    }
    builder.build()
}
