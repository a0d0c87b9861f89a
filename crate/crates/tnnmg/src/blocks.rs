//! Block partition of the coefficient vector and block-structured vectors.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Partition of the `n` coefficients into `M` contiguous blocks.
///
/// Block `k` occupies the index range `[offsets[k], offsets[k] + sizes[k])`;
/// the partition is exhaustive and non-overlapping by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockStructure {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockStructure {
    /// Partition with the given block sizes. All sizes must be positive.
    pub fn new(sizes: Vec<usize>) -> Result<Arc<Self>> {
        if sizes.is_empty() {
            return Err(Error::usage("block structure needs at least one block"));
        }
        if sizes.contains(&0) {
            return Err(Error::usage("block sizes must be positive"));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &s in &sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(Arc::new(BlockStructure { sizes, offsets }))
    }

    /// `n` scalar blocks of size one.
    pub fn scalar(n: usize) -> Arc<Self> {
        Self::new(vec![1; n]).expect("positive block count")
    }

    /// `blocks` blocks of identical `size`.
    pub fn uniform(blocks: usize, size: usize) -> Arc<Self> {
        Self::new(vec![size; blocks]).expect("positive block sizes")
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    /// Total number of scalar coefficients.
    pub fn total_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn size(&self, k: usize) -> usize {
        self.sizes[k]
    }

    pub fn offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    /// Block owning the scalar index `i`.
    pub fn block_of_index(&self, i: usize) -> usize {
        debug_assert!(i < self.total_dim());
        match self.offsets.binary_search(&i) {
            Ok(k) if k < self.sizes.len() => k,
            Ok(k) => k - 1,
            Err(k) => k - 1,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }
}

/// Dense vector carved into the blocks of a [`BlockStructure`].
#[derive(Debug, Clone)]
pub struct BlockVector {
    structure: Arc<BlockStructure>,
    data: Vec<f64>,
}

impl BlockVector {
    pub fn zeros(structure: &Arc<BlockStructure>) -> Self {
        BlockVector {
            data: vec![0.0; structure.total_dim()],
            structure: Arc::clone(structure),
        }
    }

    pub fn from_vec(structure: &Arc<BlockStructure>, data: Vec<f64>) -> Result<Self> {
        if data.len() != structure.total_dim() {
            return Err(Error::usage(format!(
                "vector length {} does not match structure dimension {}",
                data.len(),
                structure.total_dim()
            )));
        }
        Ok(BlockVector {
            structure: Arc::clone(structure),
            data,
        })
    }

    pub fn structure(&self) -> &Arc<BlockStructure> {
        &self.structure
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.data[self.structure.range(k)]
    }

    pub fn block_mut(&mut self, k: usize) -> &mut [f64] {
        let range = self.structure.range(k);
        &mut self.data[range]
    }

    /// True when both vectors are laid out over the same partition.
    pub fn same_structure(&self, other: &BlockVector) -> bool {
        Arc::ptr_eq(&self.structure, &other.structure) || self.structure == other.structure
    }

    /// True when the vector is laid out over `structure`.
    pub fn matches(&self, structure: &Arc<BlockStructure>) -> bool {
        Arc::ptr_eq(&self.structure, structure) || *self.structure == **structure
    }

    pub fn dot(&self, other: &BlockVector) -> f64 {
        debug_assert!(self.same_structure(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn inf_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &BlockVector) {
        debug_assert!(self.same_structure(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    /// `self - other` as a new vector.
    pub fn sub(&self, other: &BlockVector) -> BlockVector {
        debug_assert!(self.same_structure(other));
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// `self + alpha * other` as a new vector.
    pub fn add_scaled(&self, alpha: f64, other: &BlockVector) -> BlockVector {
        let mut out = self.clone();
        out.axpy(alpha, other);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
