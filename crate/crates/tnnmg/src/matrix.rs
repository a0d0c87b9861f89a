//! Block-sparse symmetric matrices, small dense blocks, and grid transfer
//! operators.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::blocks::{BlockStructure, BlockVector};
use crate::error::{Error, Result};

/// Small dense matrix stored row-major. Used for the `N_i x N_j` blocks of a
/// [`BlockSparseMatrix`] and for per-block projection matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl DenseBlock {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        DenseBlock {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut b = Self::zeros(n, n);
        for i in 0..n {
            b.set(i, i, 1.0);
        }
        b
    }

    pub fn scaled_identity(n: usize, alpha: f64) -> Self {
        let mut b = Self::zeros(n, n);
        for i in 0..n {
            b.set(i, i, alpha);
        }
        b
    }

    pub fn from_row_major(nrows: usize, ncols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), nrows * ncols);
        DenseBlock { nrows, ncols, data }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ncols + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ncols + j] += v;
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, s: f64, other: &DenseBlock) {
        debug_assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// `y += self * x`.
    pub fn matvec_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let row = &self.data[i * self.ncols..(i + 1) * self.ncols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            y[i] += acc;
        }
    }

    /// `y += self^T * x`.
    pub fn matvec_t_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for i in 0..self.nrows {
            let row = &self.data[i * self.ncols..(i + 1) * self.ncols];
            for (j, a) in row.iter().enumerate() {
                y[j] += a * x[i];
            }
        }
    }

    /// `x^T * self * y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.nrows {
            let row = &self.data[i * self.ncols..(i + 1) * self.ncols];
            let mut s = 0.0;
            for (a, b) in row.iter().zip(y) {
                s += a * b;
            }
            acc += x[i] * s;
        }
        acc
    }

    pub fn transpose(&self) -> DenseBlock {
        let mut t = DenseBlock::zeros(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// `left^T * self * right`, the block update used by truncated Hessians.
    pub fn sandwich(&self, left: &DenseBlock, right: &DenseBlock) -> DenseBlock {
        debug_assert_eq!(left.nrows, self.nrows);
        debug_assert_eq!(right.nrows, self.ncols);
        // tmp = self * right
        let mut tmp = DenseBlock::zeros(self.nrows, right.ncols);
        for i in 0..self.nrows {
            for k in 0..self.ncols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..right.ncols {
                    tmp.add(i, j, a * right.get(k, j));
                }
            }
        }
        // out = left^T * tmp
        let mut out = DenseBlock::zeros(left.ncols, right.ncols);
        for i in 0..left.nrows {
            for k in 0..left.ncols {
                let a = left.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..right.ncols {
                    out.add(k, j, a * tmp.get(i, j));
                }
            }
        }
        out
    }

    /// Row-sum bound `max_i sum_j |a_ij|`; for symmetric blocks this bounds
    /// the largest eigenvalue.
    pub fn gershgorin_max(&self) -> f64 {
        (0..self.nrows)
            .map(|i| {
                self.data[i * self.ncols..(i + 1) * self.ncols]
                    .iter()
                    .map(|a| a.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m: f64, a| m.max(a.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&a| a == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    /// Largest relative asymmetry `|a_ij - a_ji|` of a square block.
    pub fn symmetry_defect(&self) -> f64 {
        debug_assert_eq!(self.nrows, self.ncols);
        let scale = 1.0 + self.max_abs();
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            for j in (i + 1)..self.ncols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs() / scale);
            }
        }
        worst
    }

    /// Solve `self * x = rhs` for a symmetric positive definite block via an
    /// in-place Cholesky factorization. Returns `None` when the block is not
    /// positive definite.
    pub fn cholesky_solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        debug_assert_eq!(self.nrows, self.ncols);
        debug_assert_eq!(rhs.len(), self.nrows);
        let n = self.nrows;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return None;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        let mut x = rhs.to_vec();
        for i in 0..n {
            for k in 0..i {
                x[i] -= l[i * n + k] * x[k];
            }
            x[i] /= l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= l[k * n + i] * x[k];
            }
            x[i] /= l[i * n + i];
        }
        Some(x)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.nrows, self.ncols, |i, j| self.get(i, j))
    }
}

/// Symmetric block-sparse matrix over a [`BlockStructure`].
///
/// The block pattern is symmetric (`(i,j)` present iff `(j,i)` present) and
/// every diagonal block is present, possibly as a zero block; both are
/// enforced by [`BlockMatrixBuilder::build`].
#[derive(Debug, Clone)]
pub struct BlockSparseMatrix {
    structure: Arc<BlockStructure>,
    rows: Vec<Vec<(usize, DenseBlock)>>,
}

impl BlockSparseMatrix {
    pub fn builder(structure: &Arc<BlockStructure>) -> BlockMatrixBuilder {
        BlockMatrixBuilder {
            structure: Arc::clone(structure),
            entries: BTreeMap::new(),
        }
    }

    /// Identity matrix on the given structure.
    pub fn identity(structure: &Arc<BlockStructure>) -> Self {
        let mut b = Self::builder(structure);
        for k in 0..structure.num_blocks() {
            b.add_block(k, k, DenseBlock::identity(structure.size(k)));
        }
        b.build().expect("identity pattern is valid")
    }

    pub fn structure(&self) -> &Arc<BlockStructure> {
        &self.structure
    }

    pub fn row(&self, i: usize) -> &[(usize, DenseBlock)] {
        &self.rows[i]
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&DenseBlock> {
        self.rows[i]
            .binary_search_by_key(&j, |(c, _)| *c)
            .ok()
            .map(|pos| &self.rows[i][pos].1)
    }

    /// Diagonal block `(k,k)`; always present.
    pub fn diag_block(&self, k: usize) -> &DenseBlock {
        self.block(k, k).expect("diagonal block present")
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, &DenseBlock)> {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |(j, b)| (i, *j, b)))
    }

    /// `A * v`.
    pub fn apply(&self, v: &BlockVector) -> Result<BlockVector> {
        if !v.matches(&self.structure) {
            return Err(Error::usage("matrix/vector structure mismatch in apply"));
        }
        let mut out = BlockVector::zeros(&self.structure);
        self.apply_into(v, &mut out);
        Ok(out)
    }

    pub fn apply_into(&self, v: &BlockVector, out: &mut BlockVector) {
        out.fill(0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let range = self.structure.range(i);
            for (j, block) in row {
                let x = v.block(*j);
                block.matvec_acc(x, &mut out.as_mut_slice()[range.clone()]);
            }
        }
    }

    /// `<A v, v>`.
    pub fn quadratic_form(&self, v: &BlockVector) -> f64 {
        let mut acc = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            let x = v.block(i);
            for (j, block) in row {
                acc += block.bilinear(x, v.block(*j));
            }
        }
        acc
    }

    pub fn is_finite(&self) -> bool {
        self.rows
            .iter()
            .flat_map(|r| r.iter())
            .all(|(_, b)| b.is_finite())
    }

    /// Largest relative deviation from value symmetry `A_ij = A_ji^T`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, j, b) in self.entries() {
            if j < i {
                continue;
            }
            if i == j {
                worst = worst.max(b.symmetry_defect());
                continue;
            }
            let twin = self.block(j, i).expect("symmetric pattern");
            let scale = 1.0 + b.max_abs().max(twin.max_abs());
            for r in 0..b.nrows() {
                for c in 0..b.ncols() {
                    worst = worst.max((b.get(r, c) - twin.get(c, r)).abs() / scale);
                }
            }
        }
        worst
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.structure.total_dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, j, b) in self.entries() {
            let ri = self.structure.offset(i);
            let cj = self.structure.offset(j);
            for r in 0..b.nrows() {
                for c in 0..b.ncols() {
                    m[(ri + r, cj + c)] = b.get(r, c);
                }
            }
        }
        m
    }
}

/// Accumulating builder for [`BlockSparseMatrix`].
#[derive(Debug)]
pub struct BlockMatrixBuilder {
    structure: Arc<BlockStructure>,
    entries: BTreeMap<(usize, usize), DenseBlock>,
}

impl BlockMatrixBuilder {
    /// Add (accumulate) a dense block at block position `(i, j)`.
    pub fn add_block(&mut self, i: usize, j: usize, block: DenseBlock) {
        assert_eq!(block.nrows(), self.structure.size(i), "block row mismatch");
        assert_eq!(block.ncols(), self.structure.size(j), "block col mismatch");
        match self.entries.get_mut(&(i, j)) {
            Some(existing) => existing.add_scaled(1.0, &block),
            None => {
                self.entries.insert((i, j), block);
            }
        }
    }

    /// Accumulate `s * block` at block position `(i, j)`.
    pub fn add_block_scaled(&mut self, i: usize, j: usize, s: f64, block: &DenseBlock) {
        let bi = self.structure.size(i);
        let bj = self.structure.size(j);
        assert_eq!(block.nrows(), bi);
        assert_eq!(block.ncols(), bj);
        self.entries
            .entry((i, j))
            .or_insert_with(|| DenseBlock::zeros(bi, bj))
            .add_scaled(s, block);
    }

    /// Accumulate a scalar entry addressed by global coefficient indices.
    pub fn add_scalar(&mut self, si: usize, sj: usize, v: f64) {
        let i = self.structure.block_of_index(si);
        let j = self.structure.block_of_index(sj);
        let li = si - self.structure.offset(i);
        let lj = sj - self.structure.offset(j);
        let bi = self.structure.size(i);
        let bj = self.structure.size(j);
        self.entries
            .entry((i, j))
            .or_insert_with(|| DenseBlock::zeros(bi, bj))
            .add(li, lj, v);
    }

    /// Finalize. Inserts zero diagonal blocks where missing and zero twin
    /// blocks to make the pattern symmetric.
    pub fn build(mut self) -> Result<BlockSparseMatrix> {
        let m = self.structure.num_blocks();
        for k in 0..m {
            self.entries.entry((k, k)).or_insert_with(|| {
                DenseBlock::zeros(self.structure.size(k), self.structure.size(k))
            });
        }
        let keys: Vec<(usize, usize)> = self.entries.keys().copied().collect();
        for (i, j) in keys {
            self.entries.entry((j, i)).or_insert_with(|| {
                DenseBlock::zeros(self.structure.size(j), self.structure.size(i))
            });
        }
        let mut rows: Vec<Vec<(usize, DenseBlock)>> = vec![Vec::new(); m];
        for ((i, j), block) in self.entries {
            if !block.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite entries in matrix block ({i}, {j})"
                )));
            }
            rows[i].push((j, block));
        }
        // BTreeMap iteration is (i, j)-sorted, so each row is sorted by column.
        Ok(BlockSparseMatrix {
            structure: self.structure,
            rows,
        })
    }
}

/// Grid transfer operator between two block structures with identical
/// per-node block sizes.
///
/// The operator acts node-wise: scalar interpolation weights are applied to
/// whole blocks, i.e. the full prolongation matrix is the scalar weight
/// pattern tensored with an identity on the block components.
#[derive(Debug, Clone)]
pub struct Prolongation {
    fine: Arc<BlockStructure>,
    coarse: Arc<BlockStructure>,
    /// For each fine block: `(coarse block, weight)` pairs, sorted by block.
    weights: Vec<Vec<(usize, f64)>>,
}

impl Prolongation {
    pub fn new(
        fine: &Arc<BlockStructure>,
        coarse: &Arc<BlockStructure>,
        mut weights: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self> {
        if weights.len() != fine.num_blocks() {
            return Err(Error::usage("prolongation row count mismatch"));
        }
        for (i, row) in weights.iter_mut().enumerate() {
            row.sort_by_key(|(j, _)| *j);
            for (j, _) in row.iter() {
                if *j >= coarse.num_blocks() {
                    return Err(Error::usage("prolongation column out of range"));
                }
                if coarse.size(*j) != fine.size(i) {
                    return Err(Error::usage(
                        "prolongation couples blocks of different sizes",
                    ));
                }
            }
        }
        Ok(Prolongation {
            fine: Arc::clone(fine),
            coarse: Arc::clone(coarse),
            weights,
        })
    }

    pub fn fine_structure(&self) -> &Arc<BlockStructure> {
        &self.fine
    }

    pub fn coarse_structure(&self) -> &Arc<BlockStructure> {
        &self.coarse
    }

    /// `P * vc`, mapping a coarse vector to the fine grid.
    pub fn prolong(&self, vc: &BlockVector) -> Result<BlockVector> {
        if !vc.matches(&self.coarse) {
            return Err(Error::usage("prolong: coarse structure mismatch"));
        }
        let mut out = BlockVector::zeros(&self.fine);
        for (i, row) in self.weights.iter().enumerate() {
            let range = self.fine.range(i);
            let y = &mut out.as_mut_slice()[range];
            for (j, w) in row {
                for (yi, xi) in y.iter_mut().zip(vc.block(*j)) {
                    *yi += w * xi;
                }
            }
        }
        Ok(out)
    }

    /// `P^T * vf`, restricting a fine vector to the coarse grid.
    pub fn restrict(&self, vf: &BlockVector) -> Result<BlockVector> {
        if !vf.matches(&self.fine) {
            return Err(Error::usage("restrict: fine structure mismatch"));
        }
        let mut out = BlockVector::zeros(&self.coarse);
        for (i, row) in self.weights.iter().enumerate() {
            let x = vf.block(i);
            for (j, w) in row {
                let range = self.coarse.range(*j);
                for (yi, xi) in out.as_mut_slice()[range].iter_mut().zip(x) {
                    *yi += w * xi;
                }
            }
        }
        Ok(out)
    }

    /// Galerkin product `P^T A P` on the coarse structure.
    pub fn galerkin(&self, a: &BlockSparseMatrix) -> Result<BlockSparseMatrix> {
        if **a.structure() != *self.fine {
            return Err(Error::usage("galerkin: fine structure mismatch"));
        }
        let mut builder = BlockSparseMatrix::builder(&self.coarse);
        for (i, j, block) in a.entries() {
            for (ic, wi) in &self.weights[i] {
                for (jc, wj) in &self.weights[j] {
                    builder.add_block_scaled(*ic, *jc, wi * wj, block);
                }
            }
        }
        builder.build()
    }

    /// Scalar-expanded dense representation, for small-problem cross checks.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.fine.total_dim(), self.coarse.total_dim());
        for (i, row) in self.weights.iter().enumerate() {
            for (j, w) in row {
                for c in 0..self.fine.size(i) {
                    m[(self.fine.offset(i) + c, self.coarse.offset(*j) + c)] = *w;
                }
            }
        }
        m
    }
}
