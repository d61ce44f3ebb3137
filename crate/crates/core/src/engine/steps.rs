//! PDHG primal/dual updates and the Halpern combination.

use crate::comm::{Axis, CommError, Communicator};
use crate::partition::LocalBlock;
use crate::sparse::spmv;

use super::StepSizes;

/// Projection onto `[lo, hi]`. NaN passes through so it can be detected later.
#[inline]
pub fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

/// Elementwise projection onto the box `[lo, hi]`.
pub fn project_box(v: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((x, &l), &u) in v.iter_mut().zip(lo).zip(hi) {
        *x = clamp(*x, l, u);
    }
}

/// Dual update for one component: `y - σz - σ·proj_[-u, -l](y/σ - z)`.
///
/// Evaluated in the equivalent Moreau form `σ·(v - proj_[-u, -l](v))`,
/// `v = y/σ - z`, whose sign is exact: a row with `u = +∞` never gets a
/// negative multiplier from roundoff, which would make the dual objective −∞.
#[inline]
pub fn dual_update(y: f64, z: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let v = y / sigma - z;
    sigma * (v - clamp(v, -hi, -lo))
}

/// `x⁺ = proj_X(x - τ(c - g))`, `g = AllReduce_R(A[i,j]ᵀ y[i])`.
///
/// Leaves the reduced `Aᵀy` slice in `aty`. One vector all-reduce on `R`.
pub fn primal_step(
    blk: &LocalBlock,
    comm: &dyn Communicator,
    ss: &StepSizes,
    x: &[f64],
    y: &[f64],
    aty: &mut [f64],
    x_out: &mut [f64],
) -> Result<(), CommError> {
    spmv(&blk.matrix_t, y, aty);
    comm.allreduce_sum(Axis::R, aty)?;
    let tau = ss.tau();
    for k in 0..x.len() {
        x_out[k] = clamp(
            x[k] - tau * (blk.objective[k] - aty[k]),
            blk.var_lower[k],
            blk.var_upper[k],
        );
    }
    Ok(())
}

/// Dual update with `z = AllReduce_C(A[i,j](2x⁺ - x))`.
///
/// `xbar` is scratch of the primal slice length; the reduced `z` is left in
/// `z`. One vector all-reduce on `C`.
#[allow(clippy::too_many_arguments)]
pub fn dual_step(
    blk: &LocalBlock,
    comm: &dyn Communicator,
    ss: &StepSizes,
    x: &[f64],
    x_new: &[f64],
    y: &[f64],
    xbar: &mut [f64],
    z: &mut [f64],
    y_out: &mut [f64],
) -> Result<(), CommError> {
    for k in 0..x.len() {
        xbar[k] = 2.0 * x_new[k] - x[k];
    }
    spmv(&blk.matrix, xbar, z);
    comm.allreduce_sum(Axis::C, z)?;
    let sigma = ss.sigma();
    for k in 0..y.len() {
        y_out[k] = dual_update(y[k], z[k], sigma, blk.con_lower[k], blk.con_upper[k]);
    }
    Ok(())
}

/// Coefficients `(λ, μ)` of `z ← λ·T(z) - γz + μ·z⁰` at inner step `k`.
pub fn halpern_coefficients(k: usize, gamma: f64) -> (f64, f64) {
    let k = k as f64;
    ((1.0 + gamma) * (k + 1.0) / (k + 2.0), 1.0 / (k + 2.0))
}

/// In-place Halpern combination on one vector block. Purely local.
pub fn halpern_step(z: &mut [f64], image: &[f64], anchor: &[f64], k: usize, gamma: f64) {
    let (lam, mu) = halpern_coefficients(k, gamma);
    for ((zi, &ti), &ai) in z.iter_mut().zip(image).zip(anchor) {
        *zi = lam * ti - gamma * *zi + mu * ai;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::SimulatedGrid;
    use crate::model::{LpProblem, SparseMatrix};
    use proptest::prelude::*;

    const INF: f64 = f64::INFINITY;

    fn scalar_block(a: f64, c: f64, vl: f64, vu: f64, cl: f64, cu: f64) -> LocalBlock {
        let p = LpProblem::new(
            SparseMatrix::from_dense(&[vec![a]]),
            vec![c],
            vec![vl],
            vec![vu],
            vec![cl],
            vec![cu],
        )
        .unwrap();
        LocalBlock::whole(&p)
    }

    #[test]
    fn primal_step_examples() {
        let comm = SimulatedGrid::single();
        let blk = scalar_block(1.0, 1.0, 0.0, 10.0, 1.0, INF);
        // τ = η/ω = 0.5
        let ss = StepSizes::new(0.5, 1.0).unwrap();
        let mut g = [0.0];
        let mut out = [0.0];
        primal_step(&blk, &comm, &ss, &[0.0], &[2.0], &mut g, &mut out).unwrap();
        assert_eq!(out, [0.5]);
        assert_eq!(g, [2.0]);

        let blk0 = scalar_block(1.0, 0.0, 0.0, 10.0, 1.0, INF);
        primal_step(&blk0, &comm, &ss, &[3.0], &[0.0], &mut g, &mut out).unwrap();
        assert_eq!(out, [3.0]);

        let pinned = scalar_block(1.0, 7.0, 0.0, 0.0, 1.0, INF);
        primal_step(&pinned, &comm, &ss, &[0.0], &[-5.0], &mut g, &mut out).unwrap();
        assert_eq!(out, [0.0]);
    }

    #[test]
    fn dual_step_examples() {
        let comm = SimulatedGrid::single();
        // S = (-inf, 0]; x̄ = 2·1 - 0 = 2 so z = 2.
        let blk = scalar_block(1.0, 0.0, 0.0, 10.0, -INF, 0.0);
        let ss = StepSizes::new(1.0, 1.0).unwrap();
        let (mut xbar, mut z, mut out) = ([0.0], [0.0], [0.0]);
        dual_step(
            &blk,
            &comm,
            &ss,
            &[0.0],
            &[1.0],
            &[0.0],
            &mut xbar,
            &mut z,
            &mut out,
        )
        .unwrap();
        assert_eq!(z, [2.0]);
        assert_eq!(out, [-2.0]);

        // z = 0, y = 0, 0 ∈ -S: fixed point.
        let blk = scalar_block(1.0, 0.0, 0.0, 10.0, -1.0, 1.0);
        dual_step(
            &blk,
            &comm,
            &ss,
            &[0.0],
            &[0.0],
            &[0.0],
            &mut xbar,
            &mut z,
            &mut out,
        )
        .unwrap();
        assert_eq!(out, [0.0]);
    }

    #[test]
    fn equality_row_dual_update() {
        let (y, z, sigma, b) = (0.75, -1.5, 0.25, 2.0);
        let got = dual_update(y, z, sigma, b, b);
        assert_eq!(got, y - sigma * z + sigma * b);
    }

    #[test]
    fn halpern_examples() {
        assert_eq!(halpern_coefficients(0, 0.0), (0.5, 0.5));
        let mut z = [2.0];
        halpern_step(&mut z, &[3.0], &[1.0], 1, 0.5);
        assert!((z[0] - 7.0 / 3.0).abs() < 1e-15);
        let mut z = [4.0, -1.0];
        halpern_step(&mut z, &[2.0, 6.0], &[10.0, 10.0], 1_000_000, 0.0);
        assert!((z[0] - 2.0).abs() < 1e-5 && (z[1] - 6.0).abs() < 1e-5);
        let (lam, mu) = halpern_coefficients(1_000_000, 0.0);
        assert!((lam - 1.0).abs() < 1e-6 && mu < 1e-6);
    }

    fn bound() -> impl Strategy<Value = (f64, f64)> {
        prop_oneof![
            (-5.0f64..5.0, 0.0f64..5.0).prop_map(|(l, w)| (l, l + w)),
            (-5.0f64..5.0).prop_map(|l| (l, INF)),
            (-5.0f64..5.0).prop_map(|u| (-INF, u)),
            Just((-INF, INF)),
            (-5.0f64..5.0).prop_map(|b| (b, b)),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn projection_is_idempotent(v in -1e3f64..1e3, (l, u) in bound()) {
            let once = clamp(v, l, u);
            prop_assert_eq!(clamp(once, l, u), once);
            prop_assert!(once >= l && once <= u);
        }

        #[test]
        fn dual_update_matches_display_and_moreau(
            y in -10.0f64..10.0,
            z in -10.0f64..10.0,
            sigma in 0.01f64..10.0,
            (l, u) in bound(),
        ) {
            let got = dual_update(y, z, sigma, l, u);
            let display = y - sigma * z - sigma * clamp(y / sigma - z, -u, -l);
            let scale = 1.0 + y.abs() + (sigma * z).abs() + sigma * 5.0;
            prop_assert!((got - display).abs() <= 1e-13 * scale, "{} vs {}", got, display);
            if u == f64::INFINITY {
                prop_assert!(got >= 0.0);
            }
            if l == f64::NEG_INFINITY {
                prop_assert!(got <= 0.0);
            }
        }
    }
}
