//! SDP instance data model.
//!
//! Matrices are block diagonal. Each block is either a dense symmetric block
//! (positive size in SDPA notation) or a diagonal block (negative size). Sparse
//! matrices store the upper triangle of each block in coordinate form with
//! 1-based local indices, which matches the SDPA file layout entry for entry.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, DenseSym};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("block size must be nonzero (block {block})")]
    ZeroBlockSize { block: usize },
    #[error("block {block} out of range (structure has {blocks} blocks)")]
    BlockOutOfRange { block: usize, blocks: usize },
    #[error("index ({row}, {col}) out of range for block {block} of dimension {dim}")]
    IndexOutOfRange { block: usize, row: usize, col: usize, dim: usize },
    #[error("off-diagonal entry ({row}, {col}) in diagonal block {block}")]
    OffDiagonalInDiagonalBlock { block: usize, row: usize, col: usize },
    #[error("duplicate entry ({row}, {col}) in block {block}")]
    DuplicateEntry { block: usize, row: usize, col: usize },
    #[error("entry ({row}, {col}) in block {block} is not finite")]
    NonFinite { block: usize, row: usize, col: usize },
    #[error("flat index {flat} out of range for dimension {n}")]
    FlatOutOfRange { flat: usize, n: usize },
    #[error("structure mismatch: {0}")]
    StructureMismatch(String),
    #[error("{constraints} constraint matrices but {rhs} right-hand sides")]
    RhsLength { constraints: usize, rhs: usize },
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
}

/// Block sizes in SDPA convention plus cached offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<i64>")]
pub struct BlockStructure {
    sizes: Vec<i64>,
    offsets: Vec<usize>,
    n: usize,
}

impl TryFrom<Vec<i64>> for BlockStructure {
    type Error = ModelError;
    fn try_from(sizes: Vec<i64>) -> Result<Self, ModelError> {
        BlockStructure::new(sizes)
    }
}

impl From<BlockStructure> for Vec<i64> {
    fn from(s: BlockStructure) -> Vec<i64> {
        s.sizes
    }
}

impl BlockStructure {
    pub fn new(sizes: Vec<i64>) -> Result<Self, ModelError> {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut n = 0usize;
        for (b, &s) in sizes.iter().enumerate() {
            if s == 0 {
                return Err(ModelError::ZeroBlockSize { block: b + 1 });
            }
            offsets.push(n);
            n += s.unsigned_abs() as usize;
        }
        Ok(BlockStructure { sizes, offsets, n })
    }

    pub fn empty() -> Self {
        BlockStructure { sizes: Vec::new(), offsets: Vec::new(), n: 0 }
    }

    /// A single dense block of dimension `n` (empty structure when `n == 0`).
    pub fn dense(n: usize) -> Self {
        if n == 0 {
            Self::empty()
        } else {
            Self::new(vec![n as i64]).unwrap()
        }
    }

    pub fn sizes(&self) -> &[i64] {
        &self.sizes
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    /// Total dimension `Σ |size|`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Dimension of 1-based block `b`.
    pub fn block_dim(&self, b: usize) -> usize {
        self.sizes[b - 1].unsigned_abs() as usize
    }

    pub fn is_diagonal(&self, b: usize) -> bool {
        self.sizes[b - 1] < 0
    }

    /// Flat offset of 1-based block `b`.
    pub fn offset(&self, b: usize) -> usize {
        self.offsets[b - 1]
    }

    pub fn index(&self, block: usize, local: usize) -> Result<GlobalIndex, ModelError> {
        if block == 0 || block > self.num_blocks() {
            return Err(ModelError::BlockOutOfRange { block, blocks: self.num_blocks() });
        }
        let dim = self.block_dim(block);
        if local == 0 || local > dim {
            return Err(ModelError::IndexOutOfRange { block, row: local, col: local, dim });
        }
        Ok(GlobalIndex { block, local, flat: self.offset(block) + local - 1 })
    }

    pub fn from_flat(&self, flat: usize) -> Result<GlobalIndex, ModelError> {
        if flat >= self.n {
            return Err(ModelError::FlatOutOfRange { flat, n: self.n });
        }
        // offsets are sorted; find the last block starting at or before `flat`
        let b = self.offsets.partition_point(|&o| o <= flat);
        let block = b;
        Ok(GlobalIndex { block, local: flat - self.offsets[b - 1] + 1, flat })
    }

    pub fn contains(&self, g: &GlobalIndex) -> bool {
        self.index(g.block, g.local).map(|h| h.flat == g.flat).unwrap_or(false)
    }

    pub fn all_indices(&self) -> impl Iterator<Item = GlobalIndex> + '_ {
        (0..self.n).map(move |f| self.from_flat(f).unwrap())
    }

    /// The structure left after deleting `removed`, together with the
    /// old→new index map.
    pub fn shrink(&self, removed: &Support) -> Result<Shrink, ModelError> {
        for g in removed.iter() {
            if !self.contains(g) {
                return Err(ModelError::FlatOutOfRange { flat: g.flat, n: self.n });
            }
        }
        let mut deleted = vec![false; self.n];
        for g in removed.iter() {
            deleted[g.flat] = true;
        }
        let mut new_sizes = Vec::new();
        let mut block_map = vec![None; self.num_blocks()];
        let mut local_map = vec![None; self.n];
        for b in 1..=self.num_blocks() {
            let off = self.offset(b);
            let mut kept = 0usize;
            for l in 0..self.block_dim(b) {
                if !deleted[off + l] {
                    kept += 1;
                    local_map[off + l] = Some(kept);
                }
            }
            if kept > 0 {
                let k = kept as i64;
                new_sizes.push(if self.is_diagonal(b) { -k } else { k });
                block_map[b - 1] = Some(new_sizes.len());
            }
        }
        let new = BlockStructure::new(new_sizes)?;
        let map = (0..self.n)
            .map(|f| {
                let g = self.from_flat(f).unwrap();
                match (block_map[g.block - 1], local_map[f]) {
                    (Some(nb), Some(nl)) => Some(new.index(nb, nl).unwrap()),
                    _ => None,
                }
            })
            .collect();
        Ok(Shrink { old: self.clone(), new, map })
    }
}

/// A row/column position inside a block structure.
///
/// `block` and `local` are 1-based, `flat` is 0-based. The derived ordering
/// agrees with ordering by `flat`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GlobalIndex {
    pub block: usize,
    pub local: usize,
    pub flat: usize,
}

/// Sorted, duplicate-free set of indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<GlobalIndex>", into = "Vec<GlobalIndex>")]
pub struct Support {
    indices: Vec<GlobalIndex>,
}

impl From<Support> for Vec<GlobalIndex> {
    fn from(s: Support) -> Self {
        s.indices
    }
}

impl From<Vec<GlobalIndex>> for Support {
    fn from(mut indices: Vec<GlobalIndex>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Support { indices }
    }
}

impl Support {
    pub fn empty() -> Self {
        Support::default()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, GlobalIndex> {
        self.indices.iter()
    }

    pub fn as_slice(&self) -> &[GlobalIndex] {
        &self.indices
    }

    pub fn flats(&self) -> Vec<usize> {
        self.indices.iter().map(|g| g.flat).collect()
    }

    pub fn contains_flat(&self, flat: usize) -> bool {
        self.indices.binary_search_by_key(&flat, |g| g.flat).is_ok()
    }

    pub fn from_flats(structure: &BlockStructure, flats: &[usize]) -> Result<Self, ModelError> {
        flats
            .iter()
            .map(|&f| structure.from_flat(f))
            .collect::<Result<Vec<_>, _>>()
            .map(Support::from)
    }
}

/// Result of deleting a set of indices from a structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Shrink {
    pub old: BlockStructure,
    pub new: BlockStructure,
    /// Indexed by old flat position; `None` for deleted indices.
    pub map: Vec<Option<GlobalIndex>>,
}

impl Shrink {
    pub fn map_flat(&self, flat: usize) -> Option<GlobalIndex> {
        self.map[flat]
    }
}

/// Within-block permutation of row/column indices.
///
/// `maps[b][i]` is the new 0-based local position of old local position `i`
/// in block `b + 1`. Diagonal blocks stay diagonal under any such map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPermutation {
    structure: BlockStructure,
    maps: Vec<Vec<usize>>,
}

impl BlockPermutation {
    pub fn identity(structure: &BlockStructure) -> Self {
        let maps = (1..=structure.num_blocks()).map(|b| (0..structure.block_dim(b)).collect()).collect();
        BlockPermutation { structure: structure.clone(), maps }
    }

    pub fn new(structure: &BlockStructure, maps: Vec<Vec<usize>>) -> Result<Self, ModelError> {
        if maps.len() != structure.num_blocks() {
            return Err(ModelError::StructureMismatch("permutation block count".into()));
        }
        for (b, map) in maps.iter().enumerate() {
            let mut seen = vec![false; structure.block_dim(b + 1)];
            if map.len() != seen.len() {
                return Err(ModelError::StructureMismatch(format!("permutation length for block {}", b + 1)));
            }
            for &p in map {
                if p >= seen.len() || seen[p] {
                    return Err(ModelError::StructureMismatch(format!("block {} map is not a permutation", b + 1)));
                }
                seen[p] = true;
            }
        }
        Ok(BlockPermutation { structure: structure.clone(), maps })
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn apply_index(&self, g: GlobalIndex) -> GlobalIndex {
        let local = self.maps[g.block - 1][g.local - 1] + 1;
        self.structure.index(g.block, local).unwrap()
    }

    pub fn apply_support(&self, s: &Support) -> Support {
        Support::from(s.iter().map(|&g| self.apply_index(g)).collect::<Vec<_>>())
    }

    pub fn apply_matrix(&self, a: &SymBlockMatrix) -> SymBlockMatrix {
        assert_eq!(a.structure, self.structure, "permutation structure mismatch");
        let entries = a.entries.iter().map(|e| {
            let map = &self.maps[e.block - 1];
            Entry::new(e.block, map[e.row - 1] + 1, map[e.col - 1] + 1, e.value)
        });
        SymBlockMatrix::from_entries(self.structure.clone(), entries).unwrap()
    }

    pub fn apply_dense(&self, x: &DenseBlockMatrix) -> DenseBlockMatrix {
        assert_eq!(x.structure, self.structure, "permutation structure mismatch");
        let blocks = x
            .blocks
            .iter()
            .zip(&self.maps)
            .map(|(blk, map)| {
                let mut out = DenseSym::zeros(blk.dim());
                for i in 0..blk.dim() {
                    for j in i..blk.dim() {
                        out.set(map[i], map[j], blk.get(i, j));
                    }
                }
                out
            })
            .collect();
        DenseBlockMatrix { structure: self.structure.clone(), blocks }
    }

    pub fn apply_instance(&self, inst: &SdpInstance) -> SdpInstance {
        SdpInstance {
            structure: inst.structure.clone(),
            objective: self.apply_matrix(&inst.objective),
            constraints: inst.constraints.iter().map(|a| self.apply_matrix(a)).collect(),
            rhs: inst.rhs.clone(),
            label: inst.label.clone(),
        }
    }
}

/// One stored upper-triangle coordinate, 1-based within its block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl Entry {
    /// Normalizes `(row, col)` so that `row <= col`.
    pub fn new(block: usize, row: usize, col: usize, value: f64) -> Self {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        Entry { block, row, col, value }
    }

    fn key(&self) -> (usize, usize, usize) {
        (self.block, self.row, self.col)
    }
}

/// Sparse symmetric block-diagonal matrix.
///
/// Entries are kept sorted by `(block, row, col)`, unique, finite and nonzero;
/// an off-diagonal entry stands for both `a_ij` and `a_ji`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBlockMatrix {
    structure: BlockStructure,
    entries: Vec<Entry>,
}

/// Restriction of a matrix to the part of a support lying in one block.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedBlock {
    pub block: usize,
    /// 1-based local indices of the support inside the block.
    pub locals: Vec<usize>,
    pub values: Restricted,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Restricted {
    Dense(DenseSym),
    Diagonal(Vec<f64>),
}

impl RestrictedBlock {
    pub fn negated(&self) -> Self {
        let values = match &self.values {
            Restricted::Dense(m) => Restricted::Dense(m.negated()),
            Restricted::Diagonal(d) => Restricted::Diagonal(d.iter().map(|v| -v).collect()),
        };
        RestrictedBlock { block: self.block, locals: self.locals.clone(), values }
    }

    pub fn is_pd(&self, eps_pivot: f64) -> Result<bool, ModelError> {
        Ok(match &self.values {
            Restricted::Dense(m) => linalg::is_pd(m, eps_pivot)?,
            Restricted::Diagonal(d) => linalg::is_pd_diagonal(d, eps_pivot),
        })
    }
}

impl SymBlockMatrix {
    pub fn zeros(structure: BlockStructure) -> Self {
        SymBlockMatrix { structure, entries: Vec::new() }
    }

    /// Validates and sorts entries. Exact zeros are dropped after the
    /// duplicate check.
    pub fn from_entries(
        structure: BlockStructure,
        entries: impl IntoIterator<Item = Entry>,
    ) -> Result<Self, ModelError> {
        let mut out: Vec<Entry> = Vec::new();
        for e in entries {
            let e = Entry::new(e.block, e.row, e.col, e.value);
            if e.block == 0 || e.block > structure.num_blocks() {
                return Err(ModelError::BlockOutOfRange { block: e.block, blocks: structure.num_blocks() });
            }
            let dim = structure.block_dim(e.block);
            if e.row == 0 || e.col > dim {
                return Err(ModelError::IndexOutOfRange { block: e.block, row: e.row, col: e.col, dim });
            }
            if structure.is_diagonal(e.block) && e.row != e.col {
                return Err(ModelError::OffDiagonalInDiagonalBlock { block: e.block, row: e.row, col: e.col });
            }
            if !e.value.is_finite() {
                return Err(ModelError::NonFinite { block: e.block, row: e.row, col: e.col });
            }
            out.push(e);
        }
        out.sort_by_key(Entry::key);
        if let Some(w) = out.windows(2).find(|w| w[0].key() == w[1].key()) {
            let e = w[0];
            return Err(ModelError::DuplicateEntry { block: e.block, row: e.row, col: e.col });
        }
        out.retain(|e| e.value != 0.0);
        Ok(SymBlockMatrix { structure, entries: out })
    }

    /// Builds a sparse matrix from the nonzero upper-triangle entries of a
    /// dense block matrix.
    pub fn from_dense(x: &DenseBlockMatrix) -> Self {
        let mut entries = Vec::new();
        for (b, blk) in x.blocks.iter().enumerate() {
            for i in 0..blk.dim() {
                for j in i..blk.dim() {
                    let v = blk.get(i, j);
                    if v != 0.0 {
                        entries.push(Entry::new(b + 1, i + 1, j + 1, v));
                    }
                }
            }
        }
        SymBlockMatrix { structure: x.structure.clone(), entries }
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, block: usize, row: usize, col: usize) -> f64 {
        let key = Entry::new(block, row, col, 0.0).key();
        self.entries
            .binary_search_by_key(&key, Entry::key)
            .map(|k| self.entries[k].value)
            .unwrap_or(0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|e| Entry { value: e.value * s, ..*e })
            .filter(|e| e.value != 0.0)
            .collect();
        SymBlockMatrix { structure: self.structure.clone(), entries }
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |acc, e| acc.max(e.value.abs()))
    }

    /// Frobenius norm, counting off-diagonal entries twice.
    pub fn frobenius(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| if e.row == e.col { e.value * e.value } else { 2.0 * e.value * e.value })
            .sum::<f64>()
            .sqrt()
    }

    /// Indices touched by an entry with `|value| > eps_support`, counting both
    /// the row and the column of off-diagonal entries.
    pub fn support(&self, eps_support: f64) -> Support {
        let mut idx = Vec::new();
        for e in self.entries.iter().filter(|e| e.value.abs() > eps_support) {
            let off = self.structure.offset(e.block);
            idx.push(GlobalIndex { block: e.block, local: e.row, flat: off + e.row - 1 });
            if e.col != e.row {
                idx.push(GlobalIndex { block: e.block, local: e.col, flat: off + e.col - 1 });
            }
        }
        Support::from(idx)
    }

    /// Dense principal submatrices on `s`, one per block that `s` touches, in
    /// block order. Diagonal blocks yield their diagonal.
    pub fn restrict(&self, s: &Support) -> Result<Vec<RestrictedBlock>, ModelError> {
        let mut out: Vec<RestrictedBlock> = Vec::new();
        for g in s.iter() {
            if !self.structure.contains(g) {
                return Err(ModelError::IndexOutOfRange {
                    block: g.block,
                    row: g.local,
                    col: g.local,
                    dim: if g.block >= 1 && g.block <= self.structure.num_blocks() {
                        self.structure.block_dim(g.block)
                    } else {
                        0
                    },
                });
            }
            match out.last_mut() {
                Some(r) if r.block == g.block => r.locals.push(g.local),
                _ => out.push(RestrictedBlock {
                    block: g.block,
                    locals: vec![g.local],
                    values: Restricted::Diagonal(Vec::new()),
                }),
            }
        }
        for r in &mut out {
            let pos = |local: usize| r.locals.binary_search(&local).ok();
            let k = r.locals.len();
            let block_entries = self.block_entries(r.block);
            if self.structure.is_diagonal(r.block) {
                let mut d = vec![0.0; k];
                for e in block_entries {
                    if let Some(p) = pos(e.row) {
                        d[p] = e.value;
                    }
                }
                r.values = Restricted::Diagonal(d);
            } else {
                let mut m = DenseSym::zeros(k);
                for e in block_entries {
                    if let (Some(p), Some(q)) = (pos(e.row), pos(e.col)) {
                        m.set(p, q, e.value);
                    }
                }
                r.values = Restricted::Dense(m);
            }
        }
        Ok(out)
    }

    fn block_entries(&self, block: usize) -> &[Entry] {
        let start = self.entries.partition_point(|e| e.block < block);
        let end = self.entries.partition_point(|e| e.block <= block);
        &self.entries[start..end]
    }

    /// Removes every row and column in `s`, renumbering the survivors.
    pub fn delete_indices(&self, s: &Support) -> Result<(SymBlockMatrix, Shrink), ModelError> {
        let shrink = self.structure.shrink(s)?;
        let reduced = self.apply_shrink(&shrink)?;
        Ok((reduced, shrink))
    }

    pub fn apply_shrink(&self, shrink: &Shrink) -> Result<SymBlockMatrix, ModelError> {
        if shrink.old != self.structure {
            return Err(ModelError::StructureMismatch("shrink was computed for another structure".into()));
        }
        let entries = self
            .entries
            .iter()
            .filter_map(|e| {
                let off = self.structure.offset(e.block);
                let r = shrink.map[off + e.row - 1]?;
                let c = shrink.map[off + e.col - 1]?;
                Some(Entry { block: r.block, row: r.local, col: c.local, value: e.value })
            })
            .collect();
        // the map is monotone within blocks and preserves block order, so the
        // entries stay sorted
        Ok(SymBlockMatrix { structure: shrink.new.clone(), entries })
    }

    /// Trace inner product with a dense block matrix.
    pub fn dot(&self, x: &DenseBlockMatrix) -> Result<f64, ModelError> {
        if self.structure != x.structure {
            return Err(ModelError::StructureMismatch("dot product operands differ in block structure".into()));
        }
        Ok(self
            .entries
            .iter()
            .map(|e| {
                let v = e.value * x.blocks[e.block - 1].get(e.row - 1, e.col - 1);
                if e.row == e.col {
                    v
                } else {
                    2.0 * v
                }
            })
            .sum())
    }

    /// Trace inner product of two sparse matrices.
    pub fn dot_sparse(&self, other: &SymBlockMatrix) -> Result<f64, ModelError> {
        if self.structure != other.structure {
            return Err(ModelError::StructureMismatch("dot product operands differ in block structure".into()));
        }
        let (mut i, mut j) = (0, 0);
        let mut sum = 0.0;
        while i < self.entries.len() && j < other.entries.len() {
            let (a, b) = (&self.entries[i], &other.entries[j]);
            match a.key().cmp(&b.key()) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    let v = a.value * b.value;
                    sum += if a.row == a.col { v } else { 2.0 * v };
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(sum)
    }

    pub fn to_dense(&self) -> DenseBlockMatrix {
        let mut x = DenseBlockMatrix::zeros(&self.structure);
        for e in &self.entries {
            x.blocks[e.block - 1].set(e.row - 1, e.col - 1, e.value);
        }
        x
    }
}

/// Dense block-diagonal symmetric matrix, used for candidate solutions.
///
/// Diagonal blocks are stored as full square blocks whose off-diagonal part is
/// zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlockMatrix {
    structure: BlockStructure,
    blocks: Vec<DenseSym>,
}

impl DenseBlockMatrix {
    pub fn zeros(structure: &BlockStructure) -> Self {
        let blocks = (1..=structure.num_blocks()).map(|b| DenseSym::zeros(structure.block_dim(b))).collect();
        DenseBlockMatrix { structure: structure.clone(), blocks }
    }

    pub fn identity(structure: &BlockStructure) -> Self {
        let blocks = (1..=structure.num_blocks()).map(|b| DenseSym::identity(structure.block_dim(b))).collect();
        DenseBlockMatrix { structure: structure.clone(), blocks }
    }

    pub fn from_blocks(structure: &BlockStructure, blocks: Vec<DenseSym>) -> Result<Self, ModelError> {
        if blocks.len() != structure.num_blocks() {
            return Err(ModelError::StructureMismatch("wrong number of blocks".into()));
        }
        for (b, blk) in blocks.iter().enumerate() {
            if blk.dim() != structure.block_dim(b + 1) {
                return Err(ModelError::StructureMismatch(format!("block {} has wrong dimension", b + 1)));
            }
            if structure.is_diagonal(b + 1) {
                for i in 0..blk.dim() {
                    for j in (i + 1)..blk.dim() {
                        if blk.get(i, j) != 0.0 {
                            return Err(ModelError::OffDiagonalInDiagonalBlock { block: b + 1, row: i + 1, col: j + 1 });
                        }
                    }
                }
            }
        }
        Ok(DenseBlockMatrix { structure: structure.clone(), blocks })
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn blocks(&self) -> &[DenseSym] {
        &self.blocks
    }

    pub fn block(&self, b: usize) -> &DenseSym {
        &self.blocks[b - 1]
    }

    /// Entry at two global indices; zero across blocks.
    pub fn get(&self, a: GlobalIndex, b: GlobalIndex) -> f64 {
        if a.block != b.block {
            return 0.0;
        }
        self.blocks[a.block - 1].get(a.local - 1, b.local - 1)
    }

    pub fn set(&mut self, a: GlobalIndex, b: GlobalIndex, v: f64) -> Result<(), ModelError> {
        if a.block != b.block {
            if v == 0.0 {
                return Ok(());
            }
            return Err(ModelError::StructureMismatch("entry spans two blocks".into()));
        }
        if self.structure.is_diagonal(a.block) && a.local != b.local && v != 0.0 {
            return Err(ModelError::OffDiagonalInDiagonalBlock { block: a.block, row: a.local, col: b.local });
        }
        self.blocks[a.block - 1].set(a.local - 1, b.local - 1, v);
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        let blocks = self
            .blocks
            .iter()
            .map(|blk| DenseSym::from_upper_fn(blk.dim(), |i, j| s * blk.get(i, j)))
            .collect();
        DenseBlockMatrix { structure: self.structure.clone(), blocks }
    }

    /// Smallest eigenvalue over all blocks (`+∞` for the empty structure).
    pub fn lambda_min_lower(&self, tol: f64) -> f64 {
        self.blocks
            .iter()
            .enumerate()
            .map(|(b, blk)| {
                if self.structure.is_diagonal(b + 1) {
                    blk.diagonal().into_iter().fold(f64::INFINITY, f64::min)
                } else {
                    linalg::lambda_min_lower(blk, tol)
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &DenseBlockMatrix) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| {
                let mut m: f64 = 0.0;
                for i in 0..a.dim() {
                    for j in 0..a.dim() {
                        m = m.max((a.get(i, j) - b.get(i, j)).abs());
                    }
                }
                m
            })
            .fold(0.0, f64::max)
    }
}

/// `inf C•X  s.t.  A_i•X = b_i,  X ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpInstance {
    pub structure: BlockStructure,
    pub objective: SymBlockMatrix,
    pub constraints: Vec<SymBlockMatrix>,
    pub rhs: Vec<f64>,
    pub label: String,
}

impl SdpInstance {
    pub fn new(
        structure: BlockStructure,
        objective: SymBlockMatrix,
        constraints: Vec<SymBlockMatrix>,
        rhs: Vec<f64>,
        label: impl Into<String>,
    ) -> Result<Self, ModelError> {
        if constraints.len() != rhs.len() {
            return Err(ModelError::RhsLength { constraints: constraints.len(), rhs: rhs.len() });
        }
        if objective.structure() != &structure {
            return Err(ModelError::StructureMismatch("objective".into()));
        }
        if let Some(k) = constraints.iter().position(|a| a.structure() != &structure) {
            return Err(ModelError::StructureMismatch(format!("constraint {}", k + 1)));
        }
        if let Some(k) = rhs.iter().position(|b| !b.is_finite()) {
            return Err(ModelError::StructureMismatch(format!("rhs {} is not finite", k + 1)));
        }
        Ok(SdpInstance { structure, objective, constraints, rhs, label: label.into() })
    }

    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    pub fn n(&self) -> usize {
        self.structure.n()
    }

    /// Constraint residuals `A_i•X - b_i`.
    pub fn residuals(&self, x: &DenseBlockMatrix) -> Result<Vec<f64>, ModelError> {
        self.constraints.iter().zip(&self.rhs).map(|(a, b)| Ok(a.dot(x)? - b)).collect()
    }

    /// Negates constraint `i` (0-based) together with its right-hand side.
    pub fn negate_constraint(&mut self, i: usize) {
        self.constraints[i] = self.constraints[i].scaled(-1.0);
        self.rhs[i] = -self.rhs[i];
    }
}
