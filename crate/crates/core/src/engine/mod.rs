//! Per-device restarted-Halpern PDHG loop.
//!
//! Every device runs [`run_device`] on its [`LocalBlock`] and holds the primal
//! slice of its grid column and the dual slice of its grid row. The only
//! cross-device traffic is through the [`Communicator`]; restart and primal
//! weight decisions are computed redundantly from reduced scalars, so all
//! devices take identical branches.
//!
//! One iteration costs two vector all-reduces. Every `K` iterations a pass
//! evaluates the PDHG image `T(z^k)` (three more vector products, one fused
//! scalar reduction on each of `G`, `R`, `C`) and then either stops, restarts
//! from `T(z^k)`, or applies the Halpern step. A restart adds one `G` scalar
//! reduction for the primal-weight update.

pub mod kkt;
pub mod restart;
pub mod steps;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::{Axis, CommCounters, CommError, Communicator};
use crate::partition::LocalBlock;
use crate::sparse::{estimate_spectral_norm, spmv, DEFAULT_POWER_ITERATIONS};

pub use kkt::{evaluate_kkt, KktEvaluation, KktReport, KktScales, KktWorkspace};
pub use restart::{
    fixed_point_error, restart_decision, PidController, PidGains, RestartParams, RestartReason,
};
pub use steps::{dual_step, halpern_step, primal_step};

/// Safety factor on `1/‖A‖₂` for the step size.
pub const STEP_SIZE_FACTOR: f64 = 0.998;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid step sizes: eta={eta}, omega={omega}")]
    StepSizes { eta: f64, omega: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Comm(#[from] CommError),
}

/// `η` and `ω`; `τ = η/ω`, `σ = ηω`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub eta: f64,
    pub omega: f64,
}

impl StepSizes {
    pub fn new(eta: f64, omega: f64) -> Result<Self, EngineError> {
        if eta > 0.0 && omega > 0.0 && eta.is_finite() && omega.is_finite() {
            Ok(StepSizes { eta, omega })
        } else {
            Err(EngineError::StepSizes { eta, omega })
        }
    }

    #[inline]
    pub fn tau(&self) -> f64 {
        self.eta / self.omega
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.eta * self.omega
    }
}

/// `η = 0.998/‖A‖₂`, or 1 for a zero matrix.
pub fn step_size_from_norm(norm: f64) -> f64 {
    if norm > 0.0 {
        STEP_SIZE_FACTOR / norm
    } else {
        1.0
    }
}

/// `ω⁰ = ‖c‖ / ‖[ℓ_c, u_c]‖` when both are positive, else 1.
pub fn initial_primal_weight(scales: &KktScales) -> f64 {
    if scales.objective_norm > 0.0 && scales.bound_norm > 0.0 {
        scales.objective_norm / scales.bound_norm
    } else {
        1.0
    }
}

/// Algorithm knobs shared by the distributed engine and the reference solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgorithmParams {
    /// Reflection coefficient `γ`.
    pub gamma: f64,
    pub restart: RestartParams,
    pub pid: PidGains,
    /// Off: plain PDHG, `z ← T(z)`.
    pub halpern: bool,
    /// Off: never restart.
    pub restarts: bool,
    pub power_iterations: usize,
}

impl Default for AlgorithmParams {
    fn default() -> Self {
        AlgorithmParams {
            gamma: 0.0,
            restart: RestartParams::default(),
            pid: PidGains::default(),
            halpern: true,
            restarts: true,
            power_iterations: DEFAULT_POWER_ITERATIONS,
        }
    }
}

impl AlgorithmParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        self.restart.validate().map_err(EngineError::Config)?;
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(EngineError::Config(format!(
                "gamma must be finite and ≥ 0, got {}",
                self.gamma
            )));
        }
        if self.power_iterations == 0 {
            return Err(EngineError::Config(
                "power_iterations must be at least 1".into(),
            ));
        }
        let g = &self.pid;
        if !(g.omega_min > 0.0 && g.omega_min <= g.omega_max && g.omega_max.is_finite()) {
            return Err(EngineError::Config(format!(
                "omega bounds [{}, {}] are invalid",
                g.omega_min, g.omega_max
            )));
        }
        if ![g.kp, g.ki, g.kd].iter().all(|v| v.is_finite()) {
            return Err(EngineError::Config("PID gains must be finite".into()));
        }
        Ok(())
    }
}

/// Loop controls for one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub time_limit: Option<Duration>,
    pub kkt_interval: usize,
    pub params: AlgorithmParams,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(EngineError::Config(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.kkt_interval == 0 {
            return Err(EngineError::Config(
                "kkt_interval must be at least 1".into(),
            ));
        }
        self.params.validate()
    }

    /// Whether the iteration with 0-based index `t` ends in an evaluation pass.
    pub fn is_pass(&self, t: usize) -> bool {
        (t + 1).is_multiple_of(self.kkt_interval) || t + 1 == self.max_iterations
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    IterationLimit,
    TimeLimit,
    NumericalFailure,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::IterationLimit => "iteration_limit",
            Status::TimeLimit => "time_limit",
            Status::NumericalFailure => "numerical_failure",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One evaluation pass, as logged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    /// Iterations completed when the pass ran.
    pub iteration: usize,
    pub r_primal: f64,
    pub r_dual: f64,
    pub r_gap: f64,
    pub obj_primal: f64,
    pub obj_dual: f64,
    pub omega: f64,
    pub eta: f64,
    pub epoch: usize,
    pub fixed_point_error: f64,
    pub anchor_distance: f64,
    pub restart: Option<RestartReason>,
}

impl PassRecord {
    /// The fixed-order log line.
    pub fn log_line(&self) -> String {
        format!(
            "iter={} r_primal={:.6e} r_dual={:.6e} r_gap={:.6e} obj_P={:.12e} obj_D={:.12e} omega={:.6e} eta={:.6e} epoch={}",
            self.iteration,
            self.r_primal,
            self.r_dual,
            self.r_gap,
            self.obj_primal,
            self.obj_dual,
            self.omega,
            self.eta,
            self.epoch
        )
    }
}

/// What one device returns.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceOutcome {
    pub coord: (usize, usize),
    pub status: Status,
    /// Primal slice of this device's grid column.
    pub x: Vec<f64>,
    /// Dual slice of this device's grid row.
    pub y: Vec<f64>,
    pub report: KktReport,
    pub iterations: usize,
    pub restarts: usize,
    pub step_sizes: StepSizes,
    pub spectral_norm: f64,
    /// Only device `(0, 0)` records passes.
    pub trace: Vec<PassRecord>,
    pub comm_setup: CommCounters,
    pub comm_loop: CommCounters,
}

/// Mutable per-device iterate and bookkeeping.
#[derive(Debug, Clone)]
pub struct DeviceState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub x_anchor: Vec<f64>,
    pub y_anchor: Vec<f64>,
    pub inner_k: usize,
    pub epoch: usize,
    pub step_sizes: StepSizes,
    pub pid: PidController,
    /// Fixed-point error at the start of the current epoch, once measured.
    pub epoch_initial_error: Option<f64>,
    pub last_error: f64,
}

impl DeviceState {
    /// `x = proj_X(0)`, `y = 0`, anchored at itself.
    pub fn initial(blk: &LocalBlock, step_sizes: StepSizes, pid: PidGains) -> Self {
        let x: Vec<f64> = blk
            .var_lower
            .iter()
            .zip(&blk.var_upper)
            .map(|(&l, &u)| steps::clamp(0.0, l, u))
            .collect();
        let y = vec![0.0; blk.rows()];
        DeviceState {
            x_anchor: x.clone(),
            y_anchor: y.clone(),
            x,
            y,
            inner_k: 0,
            epoch: 0,
            step_sizes,
            pid: PidController::new(pid),
            epoch_initial_error: None,
            last_error: f64::NAN,
        }
    }
}

/// Setup on one device: spectral norm, normalizers, initial step sizes.
/// Collective.
pub fn setup_device(
    blk: &LocalBlock,
    comm: &dyn Communicator,
    params: &AlgorithmParams,
) -> Result<(f64, KktScales, StepSizes), EngineError> {
    let norm = estimate_spectral_norm(&blk.matrix, &blk.matrix_t, comm, params.power_iterations)?;
    let scales = KktScales::compute(blk, comm)?;
    let omega = initial_primal_weight(&scales).clamp(params.pid.omega_min, params.pid.omega_max);
    let ss = StepSizes::new(step_size_from_norm(norm), omega)?;
    Ok((norm, scales, ss))
}

/// Runs the full solve loop on one device. Collective: every device of the
/// grid must call this with the same configuration.
pub fn run_device(
    blk: &LocalBlock,
    comm: &dyn Communicator,
    cfg: &EngineConfig,
    start: Instant,
) -> Result<DeviceOutcome, EngineError> {
    cfg.validate()?;
    let params = &cfg.params;
    let (spectral_norm, scales, ss) = setup_device(blk, comm, params)?;
    let comm_setup = comm.counters();
    let leader = comm.coord() == (0, 0);
    let topo = comm.topology();

    let mut st = DeviceState::initial(blk, ss, params.pid);
    let (n_j, m_i) = (blk.cols(), blk.rows());
    let mut x_hat = vec![0.0; n_j];
    let mut y_hat = vec![0.0; m_i];
    let mut aty = vec![0.0; n_j];
    let mut xbar = vec![0.0; n_j];
    let mut zbuf = vec![0.0; m_i];
    let mut dx = vec![0.0; n_j];
    let mut dy = vec![0.0; m_i];
    let mut adx = vec![0.0; m_i];
    let mut ws = KktWorkspace::new(blk);
    let mut trace = Vec::new();
    let mut restarts = 0usize;

    let finish = |st: DeviceState,
                  status: Status,
                  report: KktReport,
                  iterations: usize,
                  restarts: usize,
                  trace: Vec<PassRecord>| DeviceOutcome {
        coord: comm.coord(),
        status,
        report,
        iterations,
        restarts,
        step_sizes: st.step_sizes,
        spectral_norm,
        trace,
        comm_setup,
        comm_loop: comm.counters().since(&comm_setup),
        x: st.x,
        y: st.y,
    };

    if cfg.max_iterations == 0 {
        let ev = evaluate_kkt(
            blk,
            comm,
            &st.step_sizes,
            &scales,
            &mut ws,
            &st.x,
            &st.y,
            &st.x_anchor,
            &st.y_anchor,
        )?;
        let status = if !ev.report.is_sane() {
            Status::NumericalFailure
        } else if ev.report.overall <= cfg.tolerance {
            Status::Optimal
        } else {
            Status::IterationLimit
        };
        return Ok(finish(st, status, ev.report, 0, 0, trace));
    }

    for t in 0..cfg.max_iterations {
        let ss = st.step_sizes;
        primal_step(blk, comm, &ss, &st.x, &st.y, &mut aty, &mut x_hat)?;
        dual_step(
            blk, comm, &ss, &st.x, &x_hat, &st.y, &mut xbar, &mut zbuf, &mut y_hat,
        )?;

        if cfg.is_pass(t) {
            let done = t + 1;
            // The PDHG image respects the dual sign structure; the Halpern
            // iterate generally does not, which would pin the gap at +∞.
            let ev = evaluate_kkt(
                blk,
                comm,
                &ss,
                &scales,
                &mut ws,
                &x_hat,
                &y_hat,
                &st.x_anchor,
                &st.y_anchor,
            )?;

            for k in 0..n_j {
                dx[k] = st.x[k] - x_hat[k];
            }
            for k in 0..m_i {
                dy[k] = st.y[k] - y_hat[k];
            }
            spmv(&blk.matrix, &dx, &mut adx);
            let time_flag = match cfg.time_limit {
                Some(limit) if leader && start.elapsed() >= limit => 1.0,
                _ => 0.0,
            };
            let (r, tail) =
                restart::fixed_point_error_fused(comm, &ss, &dx, &dy, &adx, &[time_flag])?;
            let out_of_time = tail[0] > 0.0;

            let report = ev.report;
            let mut record = PassRecord {
                iteration: done,
                r_primal: report.r_primal,
                r_dual: report.r_dual,
                r_gap: report.r_gap,
                obj_primal: report.obj_primal,
                obj_dual: report.obj_dual,
                omega: ss.omega,
                eta: ss.eta,
                epoch: st.epoch,
                fixed_point_error: r,
                anchor_distance: ev.anchor_distance,
                restart: None,
            };

            let status = if !report.is_sane() || r.is_nan() {
                Some(Status::NumericalFailure)
            } else if report.overall <= cfg.tolerance {
                Some(Status::Optimal)
            } else if done == cfg.max_iterations {
                Some(Status::IterationLimit)
            } else if out_of_time {
                Some(Status::TimeLimit)
            } else {
                None
            };
            if let Some(status) = status {
                if leader {
                    log::info!("{}", record.log_line());
                    trace.push(record);
                }
                std::mem::swap(&mut st.x, &mut x_hat);
                std::mem::swap(&mut st.y, &mut y_hat);
                return Ok(finish(st, status, report, done, restarts, trace));
            }

            let r0 = *st.epoch_initial_error.get_or_insert(r);
            let r_prev = if st.last_error.is_nan() {
                r0
            } else {
                st.last_error
            };
            st.last_error = r;
            let reason = if params.restarts {
                restart_decision(&params.restart, r0, r, r_prev, st.inner_k + 1, done)
            } else {
                None
            };
            if let Some(reason) = reason {
                record.restart = Some(reason);
                let mut d = [
                    norm_sq_diff(&x_hat, &st.x_anchor) / topo.rows as f64,
                    norm_sq_diff(&y_hat, &st.y_anchor) / topo.cols as f64,
                ];
                comm.allreduce_sum_scalars(Axis::G, &mut d)?;
                let omega = st.pid.update(d[0].sqrt(), d[1].sqrt(), ss.omega);
                st.step_sizes = StepSizes::new(ss.eta, omega)?;
                st.x.copy_from_slice(&x_hat);
                st.y.copy_from_slice(&y_hat);
                st.x_anchor.copy_from_slice(&x_hat);
                st.y_anchor.copy_from_slice(&y_hat);
                st.inner_k = 0;
                st.epoch += 1;
                st.epoch_initial_error = Some(r);
                st.last_error = f64::NAN;
                restarts += 1;
            }
            if leader {
                log::info!("{}", record.log_line());
                trace.push(record);
            }
            if reason.is_some() {
                continue;
            }
        }

        if params.halpern {
            let k = st.inner_k;
            halpern_step(&mut st.x, &x_hat, &st.x_anchor, k, params.gamma);
            halpern_step(&mut st.y, &y_hat, &st.y_anchor, k, params.gamma);
        } else {
            std::mem::swap(&mut st.x, &mut x_hat);
            std::mem::swap(&mut st.y, &mut y_hat);
        }
        st.inner_k += 1;
    }
    unreachable!("the last iteration is always a pass")
}

fn norm_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |s, (x, y)| {
        let d = x - y;
        s + d * d
    })
}
