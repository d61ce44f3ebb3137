//! Mapping a problem onto an `|R| x |C|` device grid.
//!
//! Rows and columns are first permuted (optionally in contiguous blocks of
//! `B` indices), then cut into `|R|` row ranges and `|C|` column ranges, either
//! uniformly or so that each range carries roughly the same number of
//! nonzeros. Device `(i, j)` receives block `A[i, j]`, the primal slices for
//! column range `j` and the dual slices for row range `i`.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LpProblem, SparseMatrix};
use crate::sparse::slice_block;

/// Block size used when none is given.
pub const DEFAULT_BLOCK_SIZE: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("cannot split {len} indices into {parts} non-empty parts")]
    TooManyParts { len: usize, parts: usize },
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridTopology {
    pub rows: usize,
    pub cols: usize,
}

impl GridTopology {
    pub fn new(rows: usize, cols: usize) -> Result<Self, PartitionError> {
        if rows == 0 || cols == 0 {
            return Err(PartitionError::Invalid(format!(
                "grid {rows}x{cols} has an empty axis"
            )));
        }
        Ok(GridTopology { rows, cols })
    }

    pub fn devices(&self) -> usize {
        self.rows * self.cols
    }
}

impl std::fmt::Display for GridTopology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl std::str::FromStr for GridTopology {
    type Err = PartitionError;

    /// Parses `RxC`, e.g. `2x4`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PartitionError::Invalid(format!("grid {s:?} is not of the form RxC"));
        let (r, c) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        let rows = r.trim().parse().map_err(|_| bad())?;
        let cols = c.trim().parse().map_err(|_| bad())?;
        GridTopology::new(rows, cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationStrategy {
    None,
    FullRandom,
    BlockRandom,
}

impl PermutationStrategy {
    pub const ALL: [PermutationStrategy; 3] = [
        PermutationStrategy::None,
        PermutationStrategy::FullRandom,
        PermutationStrategy::BlockRandom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PermutationStrategy::None => "none",
            PermutationStrategy::FullRandom => "full_random",
            PermutationStrategy::BlockRandom => "block_random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    Uniform,
    Nnz,
}

impl PartitionStrategy {
    pub const ALL: [PartitionStrategy; 2] = [PartitionStrategy::Uniform, PartitionStrategy::Nnz];

    pub fn as_str(self) -> &'static str {
        match self {
            PartitionStrategy::Uniform => "uniform",
            PartitionStrategy::Nnz => "nnz",
        }
    }
}

/// Picks `(|R|, |C|)` for `n_procs` devices.
///
/// Maximizes `|R|·|C| ≤ n_procs` first, then matches `|R|/|C|` to `m/n` in
/// log space; ties go to the larger `|R|`. Axes never exceed the matrix
/// dimension they split (so no device would own an empty range).
pub fn select_grid(m: usize, n: usize, n_procs: usize) -> GridTopology {
    let n_procs = n_procs.max(1);
    let max_r = m.max(1).min(n_procs);
    let max_c = n.max(1).min(n_procs);
    let target = if m > 0 && n > 0 {
        Some((m as f64).ln() - (n as f64).ln())
    } else {
        None
    };

    let mut best = GridTopology { rows: 1, cols: 1 };
    let mut best_dist = f64::INFINITY;
    for rows in 1..=max_r {
        let cols = (n_procs / rows).min(max_c);
        if cols == 0 {
            continue;
        }
        let dist = target.map_or(0.0, |t| ((rows as f64).ln() - (cols as f64).ln() - t).abs());
        let better = match (rows * cols).cmp(&best.devices()) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => dist <= best_dist,
        };
        if better {
            best = GridTopology { rows, cols };
            best_dist = dist;
        }
    }
    best
}

/// Shuffles `⌈len/B⌉` contiguous index blocks with a seeded Fisher–Yates pass,
/// keeping each block's internal order. `result[new] = old`.
pub fn block_random_permutation(len: usize, block_size: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    block_random_permutation_with(len, block_size, &mut rng)
}

fn block_random_permutation_with(len: usize, block_size: usize, rng: &mut impl Rng) -> Vec<usize> {
    let b = block_size.max(1);
    let nblocks = len.div_ceil(b);
    let mut order: Vec<usize> = (0..nblocks).collect();
    for i in (1..nblocks).rev() {
        let k = rng.gen_range(0..=i);
        order.swap(i, k);
    }
    order
        .into_iter()
        .flat_map(|blk| blk * b..((blk + 1) * b).min(len))
        .collect()
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![usize::MAX; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

/// Row and column reordering applied before cutting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Permutation {
    /// `row_perm[new] = old`.
    pub row_perm: Vec<usize>,
    pub col_perm: Vec<usize>,
    pub block_size: usize,
    pub seed: u64,
}

impl Permutation {
    pub fn identity(m: usize, n: usize) -> Self {
        Permutation {
            row_perm: (0..m).collect(),
            col_perm: (0..n).collect(),
            block_size: m.max(n).max(1),
            seed: 0,
        }
    }

    /// Rows are shuffled first, then columns, from one seeded stream.
    pub fn block_random(m: usize, n: usize, block_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let row_perm = block_random_permutation_with(m, block_size, &mut rng);
        let col_perm = block_random_permutation_with(n, block_size, &mut rng);
        Permutation {
            row_perm,
            col_perm,
            block_size,
            seed,
        }
    }

    pub fn row_inverse(&self) -> Vec<usize> {
        invert_permutation(&self.row_perm)
    }

    pub fn col_inverse(&self) -> Vec<usize> {
        invert_permutation(&self.col_perm)
    }

    pub fn is_identity(&self) -> bool {
        self.row_perm.iter().enumerate().all(|(i, &p)| i == p)
            && self.col_perm.iter().enumerate().all(|(i, &p)| i == p)
    }
}

/// Evenly sized cuts: part `k` ends at `⌈k·len/parts⌉`.
pub fn uniform_cuts(len: usize, parts: usize) -> Result<Vec<usize>, PartitionError> {
    if parts == 0 {
        return Err(PartitionError::Invalid("parts must be at least 1".into()));
    }
    if parts > len.max(1) {
        return Err(PartitionError::TooManyParts { len, parts });
    }
    Ok((0..=parts).map(|k| (k * len).div_ceil(parts)).collect())
}

/// Greedy sweep: cut `k` goes at the first index where the running nonzero
/// count reaches `k·total/parts`, subject to every part keeping at least one
/// index.
pub fn nnz_balanced_cuts(counts: &[usize], parts: usize) -> Result<Vec<usize>, PartitionError> {
    let len = counts.len();
    if parts == 0 {
        return Err(PartitionError::Invalid("parts must be at least 1".into()));
    }
    if parts > len.max(1) {
        return Err(PartitionError::TooManyParts { len, parts });
    }
    let total: u128 = counts.iter().map(|&c| c as u128).sum();
    if total == 0 {
        return uniform_cuts(len, parts);
    }
    let parts_w = parts as u128;
    let mut cuts = Vec::with_capacity(parts + 1);
    cuts.push(0);
    let mut running: u128 = 0;
    let mut k = 1;
    for t in 1..=len {
        running += counts[t - 1] as u128;
        if k >= parts {
            break;
        }
        let reached = running * parts_w >= k as u128 * total;
        let forced = len - t == parts - k;
        if reached || forced {
            cuts.push(t);
            k += 1;
        }
    }
    cuts.push(len);
    Ok(cuts)
}

/// Permutation, grid and cut points: the global ↔ device-local index map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionLayout {
    pub topology: GridTopology,
    pub perm: Permutation,
    pub permutation_strategy: PermutationStrategy,
    pub partition_strategy: PartitionStrategy,
    /// Row cut points in permuted index space, length `|R| + 1`.
    pub row_cuts: Vec<usize>,
    pub col_cuts: Vec<usize>,
}

impl PartitionLayout {
    pub fn row_range(&self, i: usize) -> Range<usize> {
        self.row_cuts[i]..self.row_cuts[i + 1]
    }

    pub fn col_range(&self, j: usize) -> Range<usize> {
        self.col_cuts[j]..self.col_cuts[j + 1]
    }

    pub fn local_rows(&self) -> Vec<usize> {
        self.row_cuts.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn local_cols(&self) -> Vec<usize> {
        self.col_cuts.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Nonzeros landing on each device, row-major, without materializing blocks.
    pub fn device_nnz(&self, matrix: &SparseMatrix) -> Vec<usize> {
        let owner = |cuts: &[usize], len: usize| {
            let mut own = vec![0usize; len];
            for (part, w) in cuts.windows(2).enumerate() {
                own[w[0]..w[1]].fill(part);
            }
            own
        };
        let row_owner = owner(&self.row_cuts, matrix.nrows());
        let col_owner = owner(&self.col_cuts, matrix.ncols());
        let row_inv = self.perm.row_inverse();
        let col_inv = self.perm.col_inverse();
        let mut counts = vec![0usize; self.topology.devices()];
        for (r, c, _) in matrix.triplets() {
            let i = row_owner[row_inv[r]];
            let j = col_owner[col_inv[c]];
            counts[i * self.topology.cols + j] += 1;
        }
        counts
    }

    pub fn summary(&self, matrix: &SparseMatrix) -> LayoutSummary {
        let nnz = self.device_nnz(matrix);
        let mut devices = Vec::with_capacity(nnz.len());
        for i in 0..self.topology.rows {
            for j in 0..self.topology.cols {
                devices.push(DeviceStats {
                    coord: (i, j),
                    rows: self.row_cuts[i + 1] - self.row_cuts[i],
                    cols: self.col_cuts[j + 1] - self.col_cuts[j],
                    nnz: nnz[i * self.topology.cols + j],
                });
            }
        }
        let max = nnz.iter().copied().max().unwrap_or(0);
        let mean = nnz.iter().sum::<usize>() as f64 / nnz.len().max(1) as f64;
        LayoutSummary {
            grid: self.topology,
            permutation: self.permutation_strategy,
            partition: self.partition_strategy,
            block_size: self.perm.block_size,
            seed: self.perm.seed,
            devices,
            nnz_max: max,
            nnz_mean: mean,
            imbalance: if mean > 0.0 { max as f64 / mean } else { 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceStats {
    pub coord: (usize, usize),
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
}

/// Per-device load report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSummary {
    pub grid: GridTopology,
    pub permutation: PermutationStrategy,
    pub partition: PartitionStrategy,
    pub block_size: usize,
    pub seed: u64,
    pub devices: Vec<DeviceStats>,
    pub nnz_max: usize,
    pub nnz_mean: f64,
    /// `nnz_max / nnz_mean`.
    pub imbalance: f64,
}

/// Layout options beyond the device count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutOptions {
    pub block_size: usize,
    pub seed: u64,
    pub permutation: PermutationStrategy,
    pub partition: PartitionStrategy,
}

impl Default for LayoutOptions {
    fn default() -> Self {
        LayoutOptions {
            block_size: DEFAULT_BLOCK_SIZE,
            seed: 0,
            permutation: PermutationStrategy::BlockRandom,
            partition: PartitionStrategy::Nnz,
        }
    }
}

/// Chooses the grid adaptively for `n_procs` devices and builds the layout.
pub fn build_layout(
    p: &LpProblem,
    n_procs: usize,
    opts: &LayoutOptions,
) -> Result<PartitionLayout, PartitionError> {
    if n_procs == 0 {
        return Err(PartitionError::Invalid("n_procs must be at least 1".into()));
    }
    let topology = select_grid(p.num_constraints(), p.num_variables(), n_procs);
    build_layout_on(p, topology, opts)
}

/// Builds the layout on a fixed grid.
pub fn build_layout_on(
    p: &LpProblem,
    topology: GridTopology,
    opts: &LayoutOptions,
) -> Result<PartitionLayout, PartitionError> {
    let (m, n) = (p.num_constraints(), p.num_variables());
    if opts.block_size == 0 {
        return Err(PartitionError::Invalid(
            "block size must be at least 1".into(),
        ));
    }
    let topology = GridTopology::new(topology.rows, topology.cols)?;
    let perm = match opts.permutation {
        PermutationStrategy::None => Permutation::identity(m, n),
        PermutationStrategy::FullRandom => Permutation::block_random(m, n, 1, opts.seed),
        PermutationStrategy::BlockRandom => {
            Permutation::block_random(m, n, opts.block_size, opts.seed)
        }
    };
    let (row_cuts, col_cuts) = match opts.partition {
        PartitionStrategy::Uniform => (
            uniform_cuts(m, topology.rows)?,
            uniform_cuts(n, topology.cols)?,
        ),
        PartitionStrategy::Nnz => {
            let rc = p.matrix.row_counts();
            let cc = p.matrix.col_counts();
            let rows: Vec<usize> = perm.row_perm.iter().map(|&r| rc[r]).collect();
            let cols: Vec<usize> = perm.col_perm.iter().map(|&c| cc[c]).collect();
            (
                nnz_balanced_cuts(&rows, topology.rows)?,
                nnz_balanced_cuts(&cols, topology.cols)?,
            )
        }
    };
    Ok(PartitionLayout {
        topology,
        perm,
        permutation_strategy: opts.permutation,
        partition_strategy: opts.partition,
        row_cuts,
        col_cuts,
    })
}

/// The problem with rows and columns reordered by `perm`.
pub fn permute_problem(p: &LpProblem, perm: &Permutation) -> LpProblem {
    let a = &p.matrix;
    let col_inv = perm.col_inverse();
    let mut row_offsets = Vec::with_capacity(a.nrows() + 1);
    let mut col_indices = Vec::with_capacity(a.nnz());
    let mut values = Vec::with_capacity(a.nnz());
    row_offsets.push(0);
    let mut scratch: Vec<(usize, f64)> = Vec::new();
    for &old in &perm.row_perm {
        let (cols, vals) = a.row(old);
        scratch.clear();
        scratch.extend(cols.iter().zip(vals).map(|(&c, &v)| (col_inv[c], v)));
        scratch.sort_unstable_by_key(|e| e.0);
        for &(c, v) in &scratch {
            col_indices.push(c);
            values.push(v);
        }
        row_offsets.push(col_indices.len());
    }
    let matrix = SparseMatrix::from_csr(a.nrows(), a.ncols(), row_offsets, col_indices, values)
        .expect("permutation preserves CSR validity");
    let gather = |v: &[f64], idx: &[usize]| idx.iter().map(|&k| v[k]).collect::<Vec<f64>>();
    let gather_names = |v: &[String], idx: &[usize]| {
        if v.is_empty() {
            Vec::new()
        } else {
            idx.iter().map(|&k| v[k].clone()).collect()
        }
    };
    LpProblem {
        name: p.name.clone(),
        matrix,
        objective: gather(&p.objective, &perm.col_perm),
        objective_constant: p.objective_constant,
        var_lower: gather(&p.var_lower, &perm.col_perm),
        var_upper: gather(&p.var_upper, &perm.col_perm),
        con_lower: gather(&p.con_lower, &perm.row_perm),
        con_upper: gather(&p.con_upper, &perm.row_perm),
        maximize: p.maximize,
        row_names: gather_names(&p.row_names, &perm.row_perm),
        col_names: gather_names(&p.col_names, &perm.col_perm),
    }
}

/// One device's share of the problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBlock {
    pub coord: (usize, usize),
    pub topology: GridTopology,
    /// Global (permuted) index ranges this block covers.
    pub row_range: Range<usize>,
    pub col_range: Range<usize>,
    pub matrix: SparseMatrix,
    /// Explicit transpose of `matrix`, for the `Aᵀy` product.
    pub matrix_t: SparseMatrix,
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    pub var_lower: Vec<f64>,
    pub var_upper: Vec<f64>,
    pub con_lower: Vec<f64>,
    pub con_upper: Vec<f64>,
}

impl LocalBlock {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// The whole problem as a single 1x1-grid block.
    pub fn whole(p: &LpProblem) -> LocalBlock {
        LocalBlock {
            coord: (0, 0),
            topology: GridTopology { rows: 1, cols: 1 },
            row_range: 0..p.num_constraints(),
            col_range: 0..p.num_variables(),
            matrix_t: p.matrix.transpose(),
            matrix: p.matrix.clone(),
            objective: p.objective.clone(),
            objective_constant: p.objective_constant,
            var_lower: p.var_lower.clone(),
            var_upper: p.var_upper.clone(),
            con_lower: p.con_lower.clone(),
            con_upper: p.con_upper.clone(),
        }
    }
}

/// Slices the permuted problem into one [`LocalBlock`] per device, row-major.
///
/// Primal data for column range `j` is copied into every device of grid
/// column `j`; dual data for row range `i` into every device of grid row `i`.
pub fn distribute(p: &LpProblem, layout: &PartitionLayout) -> Vec<LocalBlock> {
    let permuted = if layout.perm.is_identity() {
        None
    } else {
        Some(permute_problem(p, &layout.perm))
    };
    let q = permuted.as_ref().unwrap_or(p);
    let mut blocks = Vec::with_capacity(layout.topology.devices());
    for i in 0..layout.topology.rows {
        let rows = layout.row_range(i);
        for j in 0..layout.topology.cols {
            let cols = layout.col_range(j);
            let matrix = slice_block(&q.matrix, rows.clone(), cols.clone());
            blocks.push(LocalBlock {
                coord: (i, j),
                topology: layout.topology,
                row_range: rows.clone(),
                col_range: cols.clone(),
                matrix_t: matrix.transpose(),
                matrix,
                objective: q.objective[cols.clone()].to_vec(),
                objective_constant: q.objective_constant,
                var_lower: q.var_lower[cols.clone()].to_vec(),
                var_upper: q.var_upper[cols.clone()].to_vec(),
                con_lower: q.con_lower[rows.clone()].to_vec(),
                con_upper: q.con_upper[rows.clone()].to_vec(),
            });
        }
    }
    blocks
}

/// Scatters a global (original-order) primal vector into per-column-range slices.
pub fn scatter_primal(layout: &PartitionLayout, x: &[f64]) -> Vec<Vec<f64>> {
    let permuted: Vec<f64> = layout.perm.col_perm.iter().map(|&k| x[k]).collect();
    (0..layout.topology.cols)
        .map(|j| permuted[layout.col_range(j)].to_vec())
        .collect()
}

/// Scatters a global (original-order) dual vector into per-row-range slices.
pub fn scatter_dual(layout: &PartitionLayout, y: &[f64]) -> Vec<Vec<f64>> {
    let permuted: Vec<f64> = layout.perm.row_perm.iter().map(|&k| y[k]).collect();
    (0..layout.topology.rows)
        .map(|i| permuted[layout.row_range(i)].to_vec())
        .collect()
}

/// Reassembles per-range slices into original-order `(x, y)`.
///
/// `x_blocks[j]` is the primal slice of grid column `j`, `y_blocks[i]` the
/// dual slice of grid row `i`.
pub fn unpermute_solution(
    layout: &PartitionLayout,
    x_blocks: &[Vec<f64>],
    y_blocks: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>), PartitionError> {
    let gather = |blocks: &[Vec<f64>], sizes: Vec<usize>, perm: &[usize], what: &str| {
        if blocks.len() != sizes.len() {
            return Err(PartitionError::Dimension(format!(
                "{what}: {} slices for {} ranges",
                blocks.len(),
                sizes.len()
            )));
        }
        let mut out = vec![0.0; perm.len()];
        let mut pos = 0;
        for (b, &size) in blocks.iter().zip(&sizes) {
            if b.len() != size {
                return Err(PartitionError::Dimension(format!(
                    "{what}: slice of length {} for a range of {size}",
                    b.len()
                )));
            }
            for &v in b {
                out[perm[pos]] = v;
                pos += 1;
            }
        }
        Ok(out)
    };
    let x = gather(
        x_blocks,
        layout.local_cols(),
        &layout.perm.col_perm,
        "primal",
    )?;
    let y = gather(y_blocks, layout.local_rows(), &layout.perm.row_perm, "dual")?;
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LpProblem;

    #[test]
    fn grid_parses() {
        assert_eq!(
            "2x4".parse::<GridTopology>().unwrap(),
            GridTopology { rows: 2, cols: 4 }
        );
        assert_eq!(" 3X1 ".parse::<GridTopology>().unwrap().to_string(), "3x1");
        for bad in ["2", "0x2", "ax2", "2x", "2x2x2"] {
            assert!(bad.parse::<GridTopology>().is_err(), "{bad}");
        }
    }

    #[test]
    fn select_grid_examples() {
        assert_eq!(select_grid(100, 100, 4), GridTopology { rows: 2, cols: 2 });
        assert_eq!(
            select_grid(1_512_600, 126_250_100, 8),
            GridTopology { rows: 1, cols: 8 }
        );
        assert_eq!(select_grid(1000, 100, 8), GridTopology { rows: 8, cols: 1 });
    }

    #[test]
    fn select_grid_ties_prefer_more_rows() {
        assert_eq!(select_grid(10, 10, 2), GridTopology { rows: 2, cols: 1 });
    }

    #[test]
    fn select_grid_shrinks_to_matrix() {
        assert_eq!(select_grid(1, 1, 4), GridTopology { rows: 1, cols: 1 });
        assert_eq!(select_grid(2, 100, 8), GridTopology { rows: 1, cols: 8 });
        assert_eq!(select_grid(0, 0, 4), GridTopology { rows: 1, cols: 1 });
    }

    #[test]
    fn block_permutation_examples() {
        for seed in 0..5 {
            assert_eq!(block_random_permutation(4, 4, seed), vec![0, 1, 2, 3]);
        }
        let p = block_random_permutation(4, 1, 7);
        let inv = invert_permutation(&p);
        assert!((0..4).all(|k| p[inv[k]] == k && inv[p[k]] == k));
    }

    #[test]
    fn block_permutation_matches_reference_shuffle() {
        // Independent shuffle of the block list, then expansion.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut blocks = [[0usize, 1], [2, 3], [4, 5]];
        let mut i = blocks.len();
        while i > 1 {
            i -= 1;
            let k = rng.gen_range(0..=i);
            blocks.swap(i, k);
        }
        let expected: Vec<usize> = blocks.concat();
        let got = block_random_permutation(6, 2, 2024);
        assert_eq!(got, expected);
        assert_eq!(got, FROZEN_6_2_2024.to_vec());
    }

    const FROZEN_6_2_2024: [usize; 6] = [4, 5, 2, 3, 0, 1];

    #[test]
    fn short_last_block() {
        let p = block_random_permutation(7, 3, 11);
        let mut sorted = p.clone();
        sorted.sort();
        assert_eq!(sorted, (0..7).collect::<Vec<_>>());
        let pos6 = p.iter().position(|&v| v == 6).unwrap();
        // Block {6} stands alone; blocks {0,1,2}, {3,4,5} stay contiguous and ordered.
        for start in [0, 3] {
            let at = p.iter().position(|&v| v == start).unwrap();
            assert_eq!(&p[at..at + 3], &[start, start + 1, start + 2]);
        }
        assert!(pos6 % 3 == 0);
    }

    #[test]
    fn cuts_examples() {
        assert_eq!(nnz_balanced_cuts(&[1, 1, 1, 1], 2).unwrap(), vec![0, 2, 4]);
        assert_eq!(nnz_balanced_cuts(&[3, 1, 1, 3], 2).unwrap(), vec![0, 2, 4]);
        assert_eq!(nnz_balanced_cuts(&[5, 1, 1, 1], 2).unwrap(), vec![0, 1, 4]);
        assert!(matches!(
            nnz_balanced_cuts(&[1, 1], 3),
            Err(PartitionError::TooManyParts { len: 2, parts: 3 })
        ));
    }

    #[test]
    fn cuts_never_leave_parts_empty() {
        // All weight at the front would otherwise put every cut at index 1.
        assert_eq!(
            nnz_balanced_cuts(&[100, 0, 0, 0], 4).unwrap(),
            vec![0, 1, 2, 3, 4]
        );
        assert_eq!(
            nnz_balanced_cuts(&[0, 0, 0, 100], 2).unwrap(),
            vec![0, 3, 4]
        );
        assert_eq!(
            nnz_balanced_cuts(&[0, 0, 0], 2).unwrap(),
            uniform_cuts(3, 2).unwrap()
        );
    }

    #[test]
    fn uniform_cut_shapes() {
        assert_eq!(uniform_cuts(8, 2).unwrap(), vec![0, 4, 8]);
        assert_eq!(uniform_cuts(5, 4).unwrap(), vec![0, 2, 3, 4, 5]);
        assert_eq!(uniform_cuts(0, 1).unwrap(), vec![0, 0]);
    }

    fn dense_problem(rows: &[Vec<f64>]) -> LpProblem {
        let a = SparseMatrix::from_dense(rows);
        let (m, n) = (a.nrows(), a.ncols());
        LpProblem::new(
            a,
            (0..n).map(|j| j as f64 + 1.0).collect(),
            vec![0.0; n],
            (0..n).map(|j| 10.0 + j as f64).collect(),
            (0..m).map(|i| -(i as f64)).collect(),
            (0..m).map(|i| i as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_layout_on_square() {
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|i| (0..8).map(|j| (i * 8 + j) as f64).collect())
            .collect();
        let p = dense_problem(&rows);
        let opts = LayoutOptions {
            permutation: PermutationStrategy::None,
            partition: PartitionStrategy::Uniform,
            ..Default::default()
        };
        let layout = build_layout(&p, 4, &opts).unwrap();
        assert!(layout.perm.is_identity());
        assert_eq!(layout.row_cuts, vec![0, 4, 8]);
        assert_eq!(layout.col_cuts, vec![0, 4, 8]);
    }

    #[test]
    fn full_random_is_block_size_one() {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..9).map(|j| ((i + j) % 3) as f64).collect())
            .collect();
        let p = dense_problem(&rows);
        let full = LayoutOptions {
            permutation: PermutationStrategy::FullRandom,
            partition: PartitionStrategy::Uniform,
            seed: 42,
            block_size: 64,
        };
        let block = LayoutOptions {
            permutation: PermutationStrategy::BlockRandom,
            block_size: 1,
            ..full
        };
        let a = build_layout(&p, 4, &full).unwrap();
        let b = build_layout(&p, 4, &block).unwrap();
        assert_eq!(a.perm.row_perm, b.perm.row_perm);
        assert_eq!(a.perm.col_perm, b.perm.col_perm);
        assert_eq!(a.row_cuts, b.row_cuts);
    }

    #[test]
    fn distribute_single_block_is_whole_problem() {
        let p = dense_problem(&[vec![1.0, 2.0], vec![0.0, 3.0]]);
        let layout = build_layout(&p, 1, &LayoutOptions::default()).unwrap();
        let blocks = distribute(&p, &layout);
        assert_eq!(blocks.len(), 1);
        let q = permute_problem(&p, &layout.perm);
        assert_eq!(blocks[0].matrix, q.matrix);
        assert_eq!(blocks[0].objective, q.objective);
    }

    #[test]
    fn distribute_2x2_reassembles() {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                (0..4)
                    .map(|j| {
                        if (i + j) % 2 == 0 {
                            (1 + i * 4 + j) as f64
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let p = dense_problem(&rows);
        let opts = LayoutOptions {
            permutation: PermutationStrategy::FullRandom,
            partition: PartitionStrategy::Uniform,
            seed: 3,
            ..Default::default()
        };
        let layout = build_layout_on(&p, GridTopology { rows: 2, cols: 2 }, &opts).unwrap();
        let blocks = distribute(&p, &layout);
        let q = permute_problem(&p, &layout.perm);
        let mut dense = vec![vec![0.0; 4]; 4];
        for b in &blocks {
            for (r, c, v) in b.matrix.triplets() {
                dense[b.row_range.start + r][b.col_range.start + c] = v;
            }
            assert_eq!(b.matrix_t, b.matrix.transpose());
        }
        assert_eq!(dense, q.matrix.to_dense());
        assert_eq!(
            blocks.iter().map(|b| b.matrix.nnz()).sum::<usize>(),
            p.matrix.nnz()
        );
        let counts = layout.device_nnz(&p.matrix);
        assert_eq!(
            counts,
            blocks.iter().map(|b| b.matrix.nnz()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn unpermute_identity_concatenates() {
        let p = dense_problem(&[vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]]);
        let opts = LayoutOptions {
            permutation: PermutationStrategy::None,
            partition: PartitionStrategy::Uniform,
            ..Default::default()
        };
        let layout = build_layout_on(&p, GridTopology { rows: 2, cols: 2 }, &opts).unwrap();
        let (x, y) = unpermute_solution(
            &layout,
            &[vec![1.0, 2.0], vec![3.0]],
            &[vec![4.0], vec![5.0]],
        )
        .unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
        assert_eq!(y, vec![4.0, 5.0]);
        assert!(
            unpermute_solution(&layout, &[vec![1.0], vec![3.0]], &[vec![4.0], vec![5.0]]).is_err()
        );
    }

    #[test]
    fn scatter_unpermute_round_trip() {
        let rows: Vec<Vec<f64>> = (0..7)
            .map(|i| (0..5).map(|j| ((i * j) % 4) as f64).collect())
            .collect();
        let p = dense_problem(&rows);
        let opts = LayoutOptions {
            permutation: PermutationStrategy::BlockRandom,
            block_size: 2,
            seed: 9,
            partition: PartitionStrategy::Nnz,
        };
        let layout = build_layout_on(&p, GridTopology { rows: 3, cols: 2 }, &opts).unwrap();
        let x: Vec<f64> = (0..5).map(|k| k as f64 * 1.5).collect();
        let y: Vec<f64> = (0..7).map(|k| -(k as f64)).collect();
        let (x2, y2) = unpermute_solution(
            &layout,
            &scatter_primal(&layout, &x),
            &scatter_dual(&layout, &y),
        )
        .unwrap();
        assert_eq!(x2, x);
        assert_eq!(y2, y);
    }

    #[test]
    fn blockwise_objective_matches_original() {
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..6).map(|j| (i + j) as f64).collect())
            .collect();
        let p = dense_problem(&rows);
        let layout = build_layout_on(
            &p,
            GridTopology { rows: 1, cols: 3 },
            &LayoutOptions {
                block_size: 1,
                seed: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let blocks = distribute(&p, &layout);
        let x: Vec<f64> = (0..6).map(|k| 0.5 + k as f64).collect();
        let xs = scatter_primal(&layout, &x);
        let blockwise: f64 = (0..3)
            .map(|j| {
                blocks[j]
                    .objective
                    .iter()
                    .zip(&xs[j])
                    .map(|(c, v)| c * v)
                    .sum::<f64>()
            })
            .sum();
        let direct: f64 = p.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        assert!((blockwise - direct).abs() <= 1e-12 * direct.abs());
    }
}
