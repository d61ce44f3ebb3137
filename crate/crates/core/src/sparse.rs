//! Local sparse kernels and the distributed spectral-norm estimate.

use std::ops::Range;

use crate::comm::{Axis, CommError, Communicator};
use crate::model::SparseMatrix;

/// Power iterations used for `‖A‖₂` unless configured otherwise.
pub const DEFAULT_POWER_ITERATIONS: usize = 30;

/// `out = A x`.
pub fn spmv(a: &SparseMatrix, x: &[f64], out: &mut [f64]) {
    assert_eq!(
        x.len(),
        a.ncols(),
        "spmv: x has length {}, matrix has {} columns",
        x.len(),
        a.ncols()
    );
    assert_eq!(
        out.len(),
        a.nrows(),
        "spmv: out has length {}, matrix has {} rows",
        out.len(),
        a.nrows()
    );
    let offs = a.row_offsets();
    let cols = a.col_indices();
    let vals = a.values();
    for (i, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for k in offs[i]..offs[i + 1] {
            s += vals[k] * x[cols[k]];
        }
        *o = s;
    }
}

/// `out = Aᵀ y`, computed by scattering rows of `A`. Prefer [`spmv`] on an
/// explicit transpose in hot loops.
pub fn spmv_transpose(a: &SparseMatrix, y: &[f64], out: &mut [f64]) {
    assert_eq!(
        y.len(),
        a.nrows(),
        "spmv_transpose: y has length {}, matrix has {} rows",
        y.len(),
        a.nrows()
    );
    assert_eq!(
        out.len(),
        a.ncols(),
        "spmv_transpose: out has length {}, matrix has {} columns",
        out.len(),
        a.ncols()
    );
    out.fill(0.0);
    let offs = a.row_offsets();
    let cols = a.col_indices();
    let vals = a.values();
    for (i, &yi) in y.iter().enumerate() {
        for k in offs[i]..offs[i + 1] {
            out[cols[k]] += vals[k] * yi;
        }
    }
}

/// Copies `A[rows, cols]` into a fresh matrix with local indices.
pub fn slice_block(a: &SparseMatrix, rows: Range<usize>, cols: Range<usize>) -> SparseMatrix {
    assert!(
        rows.end <= a.nrows() && cols.end <= a.ncols(),
        "slice_block: range out of bounds"
    );
    let mut row_offsets = Vec::with_capacity(rows.len() + 1);
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    row_offsets.push(0);
    for i in rows.clone() {
        let (c, v) = a.row(i);
        // Columns are sorted within a row, so the slice is one contiguous run.
        let lo = c.partition_point(|&k| k < cols.start);
        let hi = c.partition_point(|&k| k < cols.end);
        col_indices.extend(c[lo..hi].iter().map(|&k| k - cols.start));
        values.extend_from_slice(&v[lo..hi]);
        row_offsets.push(col_indices.len());
    }
    SparseMatrix::from_csr(rows.len(), cols.len(), row_offsets, col_indices, values)
        .expect("slice of a valid matrix is valid")
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |s, (x, y)| s + x * y)
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |s, x| s + x * x)
}

/// Estimates `‖A‖₂` by power iteration on `AᵀA` over the device grid.
///
/// `block` is this device's `A[i, j]` and `block_t` its transpose. The start
/// vector is `1/√n`; each iteration costs one vector all-reduce on each of
/// `C` and `R` plus one scalar all-reduce on each. A zero matrix yields 0.
/// Power iteration approaches the norm from below.
pub fn estimate_spectral_norm(
    block: &SparseMatrix,
    block_t: &SparseMatrix,
    comm: &dyn Communicator,
    iters: usize,
) -> Result<f64, CommError> {
    let n_local = block.ncols() as f64;
    let n_total = comm.allreduce_sum_scalar(Axis::C, n_local)?;
    let m_total = comm.allreduce_sum_scalar(Axis::R, block.nrows() as f64)?;
    if n_total == 0.0 || m_total == 0.0 {
        return Ok(0.0);
    }
    let mut v = vec![1.0 / n_total.sqrt(); block.ncols()];
    let mut u = vec![0.0; block.nrows()];
    let mut w = vec![0.0; block.ncols()];
    let mut estimate = 0.0;
    for _ in 0..iters.max(1) {
        spmv(block, &v, &mut u);
        comm.allreduce_sum(Axis::C, &mut u)?;
        estimate = comm.allreduce_sum_scalar(Axis::R, norm_sq(&u))?.sqrt();
        spmv(block_t, &u, &mut w);
        comm.allreduce_sum(Axis::R, &mut w)?;
        let wn = comm.allreduce_sum_scalar(Axis::C, norm_sq(&w))?.sqrt();
        if wn == 0.0 || !wn.is_finite() {
            break;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / wn;
        }
    }
    Ok(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::SimulatedGrid;
    use proptest::prelude::*;

    fn m(rows: &[Vec<f64>]) -> SparseMatrix {
        SparseMatrix::from_dense(rows)
    }

    #[test]
    fn spmv_examples() {
        let a = m(&[vec![1.0, 2.0], vec![0.0, 3.0]]);
        let mut out = vec![0.0; 2];
        spmv(&a, &[1.0, 1.0], &mut out);
        assert_eq!(out, vec![3.0, 3.0]);
        spmv_transpose(&a, &[1.0, 1.0], &mut out);
        assert_eq!(out, vec![1.0, 5.0]);
        spmv(&a.transpose(), &[1.0, 1.0], &mut out);
        assert_eq!(out, vec![1.0, 5.0]);
    }

    #[test]
    #[should_panic(expected = "spmv")]
    fn spmv_length_mismatch_panics() {
        let a = SparseMatrix::identity(2);
        let mut out = vec![0.0; 2];
        spmv(&a, &[1.0], &mut out);
    }

    #[test]
    fn slice_examples() {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| (i * 4 + j) as f64).collect())
            .collect();
        let a = m(&rows);
        let s = slice_block(&a, 1..3, 2..4);
        assert_eq!(s.to_dense(), vec![vec![6.0, 7.0], vec![10.0, 11.0]]);
        let e = slice_block(&a, 2..2, 0..4);
        assert_eq!((e.nrows(), e.ncols(), e.nnz()), (0, 4, 0));
    }

    #[test]
    fn spectral_norm_examples() {
        let solo = SimulatedGrid::single();
        let d = m(&[vec![3.0, 0.0], vec![0.0, 1.0]]);
        let est = estimate_spectral_norm(&d, &d.transpose(), &solo, 50).unwrap();
        assert!((est - 3.0).abs() <= 1e-6, "{est}");
        let i = SparseMatrix::identity(5);
        assert!((estimate_spectral_norm(&i, &i, &solo, 1).unwrap() - 1.0).abs() < 1e-15);
        let neg = m(&[vec![-2.0]]);
        assert_eq!(estimate_spectral_norm(&neg, &neg, &solo, 5).unwrap(), 2.0);
        let z = SparseMatrix::zeros(3, 2);
        assert_eq!(
            estimate_spectral_norm(&z, &z.transpose(), &solo, 10).unwrap(),
            0.0
        );
    }

    #[test]
    fn spectral_norm_agrees_across_grids() {
        use crate::comm::run_on_grid;
        use crate::partition::GridTopology;
        use std::time::Duration;
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..5).map(|j| ((i * 7 + j * 3) % 5) as f64 - 2.0).collect())
            .collect();
        let a = m(&rows);
        let solo = SimulatedGrid::single();
        let whole = estimate_spectral_norm(&a, &a.transpose(), &solo, 30).unwrap();
        let topo = GridTopology { rows: 2, cols: 2 };
        let ests = run_on_grid(topo, Duration::from_secs(10), |c| {
            let (i, j) = c.coord();
            let r = if i == 0 { 0..3 } else { 3..6 };
            let cc = if j == 0 { 0..2 } else { 2..5 };
            let b = slice_block(&a, r, cc);
            estimate_spectral_norm(&b, &b.transpose(), c, 30).unwrap()
        });
        for e in ests {
            assert!((e - whole).abs() <= 1e-12 * whole, "{e} vs {whole}");
        }
    }

    proptest! {
        #[test]
        fn adjoint_consistency(
            entries in proptest::collection::vec((0usize..6, 0usize..5, -4.0f64..4.0), 0..20),
            x in proptest::collection::vec(-3.0f64..3.0, 5),
            y in proptest::collection::vec(-3.0f64..3.0, 6),
        ) {
            let a = SparseMatrix::from_triplets(6, 5, &entries).unwrap();
            let mut ax = vec![0.0; 6];
            let mut aty = vec![0.0; 5];
            spmv(&a, &x, &mut ax);
            spmv_transpose(&a, &y, &mut aty);
            let lhs = dot(&y, &ax);
            let rhs = dot(&aty, &x);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }
    }
}
