//! In-memory linear program in bound form:
//!
//! ```text
//! min  cᵀx + const   s.t.  ℓ_c ≤ Ax ≤ u_c,  ℓ_v ≤ x ≤ u_v
//! ```
//!
//! Infinite bounds are stored as IEEE `±∞`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Violations of the [`LpProblem`] / [`SparseMatrix`] invariants.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("malformed CSR structure: {0}")]
    Structure(String),
    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("{kind} bound {index}: lower {lower} exceeds upper {upper}")]
    InvertedBounds {
        kind: &'static str,
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("NaN in {0}")]
    NaN(&'static str),
}

/// Compressed sparse row matrix with `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from raw CSR arrays, checking every structural invariant.
    pub fn from_csr(
        nrows: usize,
        ncols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let m = SparseMatrix {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    /// Builds from `(row, col, value)` triplets in any order. Duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, ModelError> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= nrows || c >= ncols {
                return Err(ModelError::Dimension(format!(
                    "entry ({r}, {c}) outside {nrows}x{ncols}"
                )));
            }
        }
        sorted.sort_by_key(|e| (e.0, e.1));

        let mut row_offsets = vec![0usize; nrows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
        }
        for i in 0..nrows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Self::from_csr(nrows, ncols, row_offsets, col_indices, values)
    }

    /// Dense row-major input; exact zeros are not stored.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut row_offsets = Vec::with_capacity(nrows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for row in rows {
            assert_eq!(row.len(), ncols, "ragged dense input");
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            row_offsets: vec![0; nrows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            nrows: n,
            ncols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.col_indices[range.clone()], &self.values[range])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    /// Nonzeros per row.
    pub fn row_counts(&self) -> Vec<usize> {
        self.row_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Nonzeros per column.
    pub fn col_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.ncols];
        for &c in &self.col_indices {
            counts[c] += 1;
        }
        counts
    }

    /// Explicit transpose, also in CSR (i.e. the CSC form of `self`).
    ///
    /// Counting sort over columns: row indices come out ascending within each
    /// transposed row.
    pub fn transpose(&self) -> SparseMatrix {
        let mut offsets = vec![0usize; self.ncols + 1];
        for &c in &self.col_indices {
            offsets[c + 1] += 1;
        }
        for j in 0..self.ncols {
            offsets[j + 1] += offsets[j];
        }
        let mut next = offsets.clone();
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                let c = self.col_indices[k];
                let dst = next[c];
                next[c] += 1;
                col_indices[dst] = i;
                values[dst] = self.values[k];
            }
        }
        SparseMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            row_offsets: offsets,
            col_indices,
            values,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c] = v;
            }
        }
        out
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&c, &v)| (i, c, v))
        })
    }

    /// Frobenius norm, an upper bound on the spectral norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.row_offsets.len() != self.nrows + 1 {
            return Err(ModelError::Structure(format!(
                "row_offsets has length {}, expected {}",
                self.row_offsets.len(),
                self.nrows + 1
            )));
        }
        if self.row_offsets[0] != 0 || self.row_offsets[self.nrows] != self.values.len() {
            return Err(ModelError::Structure(
                "row_offsets must start at 0 and end at nnz".into(),
            ));
        }
        if self.col_indices.len() != self.values.len() {
            return Err(ModelError::Structure(
                "col_indices and values differ in length".into(),
            ));
        }
        for i in 0..self.nrows {
            let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
            if lo > hi {
                return Err(ModelError::Structure(format!(
                    "row_offsets decrease at row {i}"
                )));
            }
            let cols = &self.col_indices[lo..hi];
            for (k, &c) in cols.iter().enumerate() {
                if c >= self.ncols {
                    return Err(ModelError::Structure(format!(
                        "column {c} out of range in row {i}"
                    )));
                }
                if k > 0 && cols[k - 1] >= c {
                    return Err(ModelError::Structure(format!(
                        "columns not strictly increasing in row {i}"
                    )));
                }
                if !self.values[lo + k].is_finite() {
                    return Err(ModelError::NonFiniteEntry { row: i, col: c });
                }
            }
        }
        Ok(())
    }
}

/// A linear program `min cᵀx + const  s.t.  Ax ∈ [ℓ_c, u_c],  x ∈ [ℓ_v, u_v]`.
///
/// Maximization problems are stored negated; `maximize` records that so
/// reported objectives can be flipped back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub name: String,
    pub matrix: SparseMatrix,
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    pub var_lower: Vec<f64>,
    pub var_upper: Vec<f64>,
    pub con_lower: Vec<f64>,
    pub con_upper: Vec<f64>,
    pub maximize: bool,
    pub row_names: Vec<String>,
    pub col_names: Vec<String>,
}

impl LpProblem {
    /// Builds and validates a problem with generated row/column names.
    pub fn new(
        matrix: SparseMatrix,
        objective: Vec<f64>,
        var_lower: Vec<f64>,
        var_upper: Vec<f64>,
        con_lower: Vec<f64>,
        con_upper: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let p = LpProblem {
            name: String::from("LP"),
            row_names: (0..matrix.nrows()).map(|i| format!("R{i}")).collect(),
            col_names: (0..matrix.ncols()).map(|j| format!("C{j}")).collect(),
            matrix,
            objective,
            objective_constant: 0.0,
            var_lower,
            var_upper,
            con_lower,
            con_upper,
            maximize: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn num_constraints(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_variables(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.matrix.validate()?;
        let (m, n) = (self.num_constraints(), self.num_variables());
        let check_len = |what: &str, len: usize, want: usize| {
            if len == want {
                Ok(())
            } else {
                Err(ModelError::Dimension(format!(
                    "{what} has length {len}, expected {want}"
                )))
            }
        };
        check_len("objective", self.objective.len(), n)?;
        check_len("var_lower", self.var_lower.len(), n)?;
        check_len("var_upper", self.var_upper.len(), n)?;
        check_len("con_lower", self.con_lower.len(), m)?;
        check_len("con_upper", self.con_upper.len(), m)?;
        if !self.row_names.is_empty() {
            check_len("row_names", self.row_names.len(), m)?;
        }
        if !self.col_names.is_empty() {
            check_len("col_names", self.col_names.len(), n)?;
        }
        if self.objective.iter().any(|v| !v.is_finite()) || !self.objective_constant.is_finite() {
            return Err(ModelError::NaN("objective"));
        }
        check_bounds("variable", &self.var_lower, &self.var_upper)?;
        check_bounds("constraint", &self.con_lower, &self.con_upper)?;
        Ok(())
    }

    /// `cᵀx + const` in the internal (minimization) sense.
    ///
    /// Panics if `x` has the wrong length.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        assert_eq!(
            x.len(),
            self.num_variables(),
            "objective_value: length mismatch"
        );
        dot(&self.objective, x) + self.objective_constant
    }

    /// Objective in the user's sense (un-negated for maximization problems).
    pub fn reported_objective(&self, internal: f64) -> f64 {
        if self.maximize {
            -internal
        } else {
            internal
        }
    }
}

fn check_bounds(kind: &'static str, lower: &[f64], upper: &[f64]) -> Result<(), ModelError> {
    for (index, (&l, &u)) in lower.iter().zip(upper).enumerate() {
        if l.is_nan() || u.is_nan() {
            return Err(ModelError::NaN("bounds"));
        }
        if l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
            return Err(ModelError::InvertedBounds {
                kind,
                index,
                lower: l,
                upper: u,
            });
        }
    }
    Ok(())
}

/// Ascending-order dot product.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}
