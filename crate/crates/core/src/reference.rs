//! Single-device oracle: the same algorithm on whole vectors, no communicator.
//!
//! Written independently of the per-device engine but with the same
//! floating-point evaluation order, so a 1x1-grid solve must reproduce it bit
//! for bit. Multi-device solves differ only by reassociated sums.

use std::time::Instant;

use crate::comm::CommCounters;
use crate::engine::kkt::finite_bound_sq;
use crate::engine::steps::{clamp, dual_update, halpern_coefficients};
use crate::engine::{
    restart_decision, DeviceOutcome, KktReport, PassRecord, PidController, Status, StepSizes,
    STEP_SIZE_FACTOR,
};
use crate::model::{LpProblem, SparseMatrix};
use crate::partition::{invert_permutation, permute_problem, GridTopology};
use crate::solver::{SolveError, SolveResult, SolverConfig};
use crate::sparse::spmv;

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |s, a| s + a * a)
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |s, (x, y)| s + x * y)
}

fn diff_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |s, (x, y)| {
        let d = x - y;
        s + d * d
    })
}

/// Power iteration on `AᵀA` from `1/√n`.
pub fn power_norm(a: &SparseMatrix, at: &SparseMatrix, iters: usize) -> f64 {
    let (m, n) = (a.nrows(), a.ncols());
    if m == 0 || n == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut u = vec![0.0; m];
    let mut w = vec![0.0; n];
    let mut est = 0.0;
    for _ in 0..iters.max(1) {
        spmv(a, &v, &mut u);
        est = sum_sq(&u).sqrt();
        spmv(at, &u, &mut w);
        let wn = sum_sq(&w).sqrt();
        if wn == 0.0 || !wn.is_finite() {
            break;
        }
        for k in 0..n {
            v[k] = w[k] / wn;
        }
    }
    est
}

/// `‖·‖_P` from squared pieces, negative roundoff clamped.
fn metric(ss: &StepSizes, xx: f64, yy: f64, xy: f64) -> f64 {
    let v = ss.omega / ss.eta * xx + 1.0 / (ss.eta * ss.omega) * yy + 2.0 * xy;
    if v > 0.0 {
        v.sqrt()
    } else if v.is_nan() {
        v
    } else {
        0.0
    }
}

struct Kkt {
    report: KktReport,
    anchor: f64,
}

struct Oracle<'a> {
    p: &'a LpProblem,
    at: SparseMatrix,
    c_norm: f64,
    b_norm: f64,
}

impl Oracle<'_> {
    fn kkt(&self, ss: &StepSizes, x: &[f64], y: &[f64], x0: &[f64], y0: &[f64]) -> Kkt {
        let p = self.p;
        let (m, n) = (p.num_constraints(), p.num_variables());
        let mut ax = vec![0.0; m];
        spmv(&p.matrix, x, &mut ax);
        let mut aty = vec![0.0; n];
        spmv(&self.at, y, &mut aty);
        let dx0: Vec<f64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
        let mut adx0 = vec![0.0; m];
        spmv(&p.matrix, &dx0, &mut adx0);

        let (mut rp, mut pm, mut inf, mut cross, mut yy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..m {
            let (l, u) = (p.con_lower[i], p.con_upper[i]);
            let r = ax[i] - clamp(ax[i], l, u);
            rp += r * r;
            let neg = (-y[i]).max(0.0);
            let pos = y[i].max(0.0);
            if neg > 0.0 {
                if u.is_finite() {
                    pm += u * neg;
                } else {
                    inf += 1.0;
                }
            }
            if pos > 0.0 {
                if l.is_finite() {
                    pm -= l * pos;
                } else {
                    inf += 1.0;
                }
            }
            let d = y[i] - y0[i];
            cross += adx0[i] * d;
            yy += d * d;
        }

        let tau = ss.tau();
        let (mut rd, mut cx, mut sx, mut xx) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..n {
            let g = p.objective[j] - aty[j];
            let t = x[j] - tau * g;
            let proj = clamp(t, p.var_lower[j], p.var_upper[j]);
            let r = (proj - x[j]) / tau;
            let s = (proj - t) / tau;
            rd += r * r;
            cx += p.objective[j] * x[j];
            sx += s * x[j];
            xx += dx0[j] * dx0[j];
        }

        let r_primal = rp.sqrt() / (1.0 + self.b_norm);
        let r_dual = rd.sqrt() / (1.0 + self.c_norm);
        let (r_gap, dual) = if inf > 0.0 {
            (f64::INFINITY, f64::NEG_INFINITY)
        } else {
            let d = -pm + sx;
            ((cx + pm - sx).abs() / (1.0 + cx.abs().max(d.abs())), d)
        };
        Kkt {
            report: KktReport {
                r_primal,
                r_dual,
                r_gap,
                obj_primal: cx + p.objective_constant,
                obj_dual: dual + p.objective_constant,
                overall: r_primal.max(r_dual).max(r_gap),
            },
            anchor: metric(ss, xx, yy, cross),
        }
    }
}

fn sane(r: &KktReport) -> bool {
    r.r_primal.is_finite()
        && r.r_dual.is_finite()
        && (r.r_gap.is_finite() || r.r_gap == f64::INFINITY)
        && r.obj_primal.is_finite()
}

/// Runs the algorithm on `q` (already permuted) and returns the result in
/// `q`'s index order.
pub fn reference_run(
    q: &LpProblem,
    cfg: &SolverConfig,
    start: Instant,
) -> Result<DeviceOutcome, SolveError> {
    let ecfg = cfg.engine_config();
    ecfg.validate()?;
    let params = ecfg.params;
    let (m, n) = (q.num_constraints(), q.num_variables());
    let at = q.matrix.transpose();
    let norm = power_norm(&q.matrix, &at, params.power_iterations);
    let c_norm = sum_sq(&q.objective).sqrt();
    let b_norm = finite_bound_sq(&q.con_lower, &q.con_upper).sqrt();
    let oracle = Oracle {
        p: q,
        at,
        c_norm,
        b_norm,
    };
    let eta = if norm > 0.0 {
        STEP_SIZE_FACTOR / norm
    } else {
        1.0
    };
    let omega0 = if c_norm > 0.0 && b_norm > 0.0 {
        c_norm / b_norm
    } else {
        1.0
    };
    let mut ss = StepSizes::new(
        eta,
        omega0.clamp(params.pid.omega_min, params.pid.omega_max),
    )?;

    let mut x: Vec<f64> = (0..n)
        .map(|j| clamp(0.0, q.var_lower[j], q.var_upper[j]))
        .collect();
    let mut y = vec![0.0; m];
    let mut x0 = x.clone();
    let mut y0 = y.clone();
    let mut pid = PidController::new(params.pid);
    let (mut inner_k, mut epoch, mut restarts) = (0usize, 0usize, 0usize);
    let mut r_start: Option<f64> = None;
    let mut r_last = f64::NAN;
    let mut trace = Vec::new();

    let outcome =
        |x: Vec<f64>, y: Vec<f64>, status, report, iterations, restarts, ss, trace| DeviceOutcome {
            coord: (0, 0),
            status,
            x,
            y,
            report,
            iterations,
            restarts,
            step_sizes: ss,
            spectral_norm: norm,
            trace,
            comm_setup: CommCounters::default(),
            comm_loop: CommCounters::default(),
        };

    if ecfg.max_iterations == 0 {
        let k = oracle.kkt(&ss, &x, &y, &x0, &y0).report;
        let status = if !sane(&k) {
            Status::NumericalFailure
        } else if k.overall <= ecfg.tolerance {
            Status::Optimal
        } else {
            Status::IterationLimit
        };
        return Ok(outcome(x, y, status, k, 0, 0, ss, trace));
    }

    let mut aty = vec![0.0; n];
    let mut xh = vec![0.0; n];
    let mut xbar = vec![0.0; n];
    let mut z = vec![0.0; m];
    let mut yh = vec![0.0; m];
    let mut adx = vec![0.0; m];
    for t in 0..ecfg.max_iterations {
        let tau = ss.tau();
        let sigma = ss.sigma();
        spmv(&oracle.at, &y, &mut aty);
        for j in 0..n {
            xh[j] = clamp(
                x[j] - tau * (q.objective[j] - aty[j]),
                q.var_lower[j],
                q.var_upper[j],
            );
            xbar[j] = 2.0 * xh[j] - x[j];
        }
        spmv(&q.matrix, &xbar, &mut z);
        for i in 0..m {
            yh[i] = dual_update(y[i], z[i], sigma, q.con_lower[i], q.con_upper[i]);
        }

        if ecfg.is_pass(t) {
            let done = t + 1;
            let kkt = oracle.kkt(&ss, &xh, &yh, &x0, &y0);
            let dx: Vec<f64> = x.iter().zip(&xh).map(|(a, b)| a - b).collect();
            let dy: Vec<f64> = y.iter().zip(&yh).map(|(a, b)| a - b).collect();
            spmv(&q.matrix, &dx, &mut adx);
            let r = metric(&ss, sum_sq(&dx), sum_sq(&dy), inner(&adx, &dy));
            let out_of_time = matches!(ecfg.time_limit, Some(limit) if start.elapsed() >= limit);

            let report = kkt.report;
            let mut rec = PassRecord {
                iteration: done,
                r_primal: report.r_primal,
                r_dual: report.r_dual,
                r_gap: report.r_gap,
                obj_primal: report.obj_primal,
                obj_dual: report.obj_dual,
                omega: ss.omega,
                eta: ss.eta,
                epoch,
                fixed_point_error: r,
                anchor_distance: kkt.anchor,
                restart: None,
            };
            let status = if !sane(&report) || r.is_nan() {
                Some(Status::NumericalFailure)
            } else if report.overall <= ecfg.tolerance {
                Some(Status::Optimal)
            } else if done == ecfg.max_iterations {
                Some(Status::IterationLimit)
            } else if out_of_time {
                Some(Status::TimeLimit)
            } else {
                None
            };
            if let Some(status) = status {
                trace.push(rec);
                return Ok(outcome(xh, yh, status, report, done, restarts, ss, trace));
            }

            let r0 = *r_start.get_or_insert(r);
            let r_prev = if r_last.is_nan() { r0 } else { r_last };
            r_last = r;
            let reason = if params.restarts {
                restart_decision(&params.restart, r0, r, r_prev, inner_k + 1, done)
            } else {
                None
            };
            if let Some(reason) = reason {
                rec.restart = Some(reason);
                let d_x = diff_sq(&xh, &x0).sqrt();
                let d_y = diff_sq(&yh, &y0).sqrt();
                ss = StepSizes::new(ss.eta, pid.update(d_x, d_y, ss.omega))?;
                x.copy_from_slice(&xh);
                y.copy_from_slice(&yh);
                x0.copy_from_slice(&xh);
                y0.copy_from_slice(&yh);
                inner_k = 0;
                epoch += 1;
                r_start = Some(r);
                r_last = f64::NAN;
                restarts += 1;
                trace.push(rec);
                continue;
            }
            trace.push(rec);
        }

        if params.halpern {
            let (lam, mu) = halpern_coefficients(inner_k, params.gamma);
            let g = params.gamma;
            for j in 0..n {
                x[j] = lam * xh[j] - g * x[j] + mu * x0[j];
            }
            for i in 0..m {
                y[i] = lam * yh[i] - g * y[i] + mu * y0[i];
            }
        } else {
            x.copy_from_slice(&xh);
            y.copy_from_slice(&yh);
        }
        inner_k += 1;
    }
    unreachable!("the last iteration is always a pass")
}

/// The single-device oracle solve. Uses the same permutation a 1x1-grid
/// [`crate::solver::solve`] would, and reports in original order.
pub fn reference_solve(p: &LpProblem, cfg: &SolverConfig) -> Result<SolveResult, SolveError> {
    let start = Instant::now();
    p.validate()?;
    let one = SolverConfig {
        grid: Some(GridTopology { rows: 1, cols: 1 }),
        n_procs: cfg.n_procs.max(1),
        ..cfg.clone()
    };
    one.validate()?;
    let layout = one.layout_for(p)?;
    let q = permute_problem(p, &layout.perm);
    let out = reference_run(&q, &one, start)?;
    let col_inv = invert_permutation(&layout.perm.col_perm);
    let row_inv = invert_permutation(&layout.perm.row_perm);
    let x = col_inv.iter().map(|&k| out.x[k]).collect();
    let y = row_inv.iter().map(|&k| out.y[k]).collect();
    let summary = layout.summary(&p.matrix);
    Ok(SolveResult::from_parts(
        p,
        &out,
        x,
        y,
        Vec::new(),
        summary,
        start.elapsed().as_secs_f64(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::solve;

    const INF: f64 = f64::INFINITY;

    fn small_lp() -> LpProblem {
        // min -x - y  s.t. x + y ≤ 1, x, y ∈ [0, 1]
        LpProblem::new(
            SparseMatrix::from_dense(&[vec![1.0, 1.0]]),
            vec![-1.0, -1.0],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![-INF],
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn power_norm_matches_diagonal() {
        let a = SparseMatrix::from_dense(&[vec![3.0, 0.0], vec![0.0, 1.0]]);
        assert!((power_norm(&a, &a.transpose(), 50) - 3.0).abs() < 1e-6);
        let z = SparseMatrix::zeros(0, 3);
        assert_eq!(power_norm(&z, &z.transpose(), 5), 0.0);
    }

    #[test]
    fn reaches_analytic_optimum() {
        let cfg = SolverConfig {
            tolerance: 1e-6,
            ..Default::default()
        };
        let r = reference_solve(&small_lp(), &cfg).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.objective + 1.0).abs() <= 1e-6 * 2.0, "{}", r.objective);
    }

    #[test]
    fn single_device_solve_is_bit_identical() {
        let cfg = SolverConfig {
            tolerance: 1e-8,
            ..Default::default()
        };
        let a = reference_solve(&small_lp(), &cfg).unwrap();
        let b = solve(&small_lp(), &cfg).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn zero_objective_box_accepts_start() {
        let p = LpProblem::new(
            SparseMatrix::zeros(0, 2),
            vec![0.0, 0.0],
            vec![-1.0, 2.0],
            vec![1.0, 3.0],
            vec![],
            vec![],
        )
        .unwrap();
        let at_start = SolverConfig {
            max_iterations: 0,
            ..Default::default()
        };
        let r = reference_solve(&p, &at_start).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert_eq!(r.x, vec![0.0, 2.0]);
        assert_eq!(r.kkt.overall, 0.0);

        let r = reference_solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert_eq!(r.iterations, 64);
        assert_eq!(r.restarts, 0);
        assert!((r.x[1] - 2.0).abs() < 1e-12);
    }
}
