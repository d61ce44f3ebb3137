//! End-to-end solve: layout, worker grid, result assembly.

use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::{run_on_grid, CommCounters, CommError, Communicator};
use crate::engine::{
    run_device, AlgorithmParams, DeviceOutcome, EngineConfig, EngineError, KktReport, PassRecord,
    Status, StepSizes,
};
use crate::model::LpProblem;
use crate::partition::{
    build_layout, build_layout_on, distribute, unpermute_solution, GridTopology, LayoutOptions,
    LayoutSummary, PartitionError, PartitionLayout,
};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid problem: {0}")]
    Problem(#[from] crate::model::ModelError),
    #[error("layout: {0}")]
    Layout(#[from] PartitionError),
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
}

/// Everything that controls a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stop when the largest relative KKT residual is at most this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Checked only at evaluation passes.
    pub time_limit_seconds: Option<f64>,
    /// Iterations between evaluation passes.
    pub kkt_interval: usize,
    /// Devices available; the grid uses `|R|·|C| ≤ n_procs` of them.
    pub n_procs: usize,
    /// Fixed grid, bypassing adaptive selection.
    pub grid: Option<GridTopology>,
    #[serde(flatten)]
    pub layout: LayoutOptions,
    pub params: AlgorithmParams,
    /// How long a device waits in a collective before giving up.
    pub comm_timeout_seconds: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-4,
            max_iterations: 100_000,
            time_limit_seconds: None,
            kkt_interval: 64,
            n_procs: 1,
            grid: None,
            layout: LayoutOptions::default(),
            params: AlgorithmParams::default(),
            comm_timeout_seconds: 600.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        if self.n_procs == 0 {
            return Err(SolveError::Config("n_procs must be at least 1".into()));
        }
        if let Some(g) = self.grid {
            if g.rows == 0 || g.cols == 0 {
                return Err(SolveError::Config(format!("grid {g} has an empty axis")));
            }
            if g.devices() > self.n_procs {
                return Err(SolveError::Config(format!(
                    "grid {g} needs {} devices but only {} are available",
                    g.devices(),
                    self.n_procs
                )));
            }
        }
        if let Some(t) = self.time_limit_seconds {
            if !t.is_finite() || t < 0.0 {
                return Err(SolveError::Config(format!(
                    "time limit must be finite and ≥ 0, got {t}"
                )));
            }
        }
        if !self.comm_timeout_seconds.is_finite() || self.comm_timeout_seconds <= 0.0 {
            return Err(SolveError::Config(
                "comm_timeout_seconds must be positive and finite".into(),
            ));
        }
        self.engine_config().validate()?;
        Ok(())
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            time_limit: self.time_limit_seconds.map(Duration::from_secs_f64),
            kkt_interval: self.kkt_interval,
            params: self.params,
        }
    }

    /// Builds the layout this configuration would use for `p`.
    pub fn layout_for(&self, p: &LpProblem) -> Result<PartitionLayout, SolveError> {
        Ok(match self.grid {
            Some(g) => build_layout_on(p, g, &self.layout)?,
            None => build_layout(p, self.n_procs, &self.layout)?,
        })
    }
}

/// Communication tallies of one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceCounters {
    pub coord: (usize, usize),
    pub setup: CommCounters,
    pub main_loop: CommCounters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: Status,
    /// Primal objective in the problem's own sense (maximization un-negated).
    pub objective: f64,
    /// Dual objective in the problem's own sense.
    pub dual_objective: f64,
    /// Primal solution in original column order.
    pub x: Vec<f64>,
    /// Dual solution in original row order, for the internal minimization form.
    pub y: Vec<f64>,
    pub kkt: KktReport,
    pub iterations: usize,
    pub restarts: usize,
    /// Not serialized, so that JSON output is reproducible.
    #[serde(skip)]
    pub wall_seconds: f64,
    pub step_sizes: StepSizes,
    pub spectral_norm_estimate: f64,
    /// Device `(0, 0)`'s tallies for setup (power iteration, norms).
    pub comm_setup: CommCounters,
    /// Device `(0, 0)`'s tallies for the main loop.
    pub comm_loop: CommCounters,
    pub device_counters: Vec<DeviceCounters>,
    pub layout: LayoutSummary,
    pub trace: Vec<PassRecord>,
}

impl SolveResult {
    pub(crate) fn from_parts(
        p: &LpProblem,
        leader: &DeviceOutcome,
        x: Vec<f64>,
        y: Vec<f64>,
        device_counters: Vec<DeviceCounters>,
        layout: LayoutSummary,
        wall_seconds: f64,
    ) -> Self {
        SolveResult {
            status: leader.status,
            objective: p.reported_objective(leader.report.obj_primal),
            dual_objective: p.reported_objective(leader.report.obj_dual),
            x,
            y,
            kkt: leader.report,
            iterations: leader.iterations,
            restarts: leader.restarts,
            wall_seconds,
            step_sizes: leader.step_sizes,
            spectral_norm_estimate: leader.spectral_norm,
            comm_setup: leader.comm_setup,
            comm_loop: leader.comm_loop,
            device_counters,
            layout,
            trace: leader.trace.clone(),
        }
    }
}

/// Solves `p` on a simulated device grid.
///
/// Deterministic for a fixed problem and configuration. Numerical trouble is
/// reported through [`Status::NumericalFailure`]; errors are reserved for bad
/// input and communication faults.
pub fn solve(p: &LpProblem, cfg: &SolverConfig) -> Result<SolveResult, SolveError> {
    let start = Instant::now();
    p.validate()?;
    cfg.validate()?;
    let layout = cfg.layout_for(p)?;
    let topo = layout.topology;
    let blocks = distribute(p, &layout);
    let ecfg = cfg.engine_config();
    let timeout = Duration::from_secs_f64(cfg.comm_timeout_seconds);

    let results = run_on_grid(topo, timeout, |comm| {
        let (i, j) = comm.coord();
        let blk = &blocks[i * topo.cols + j];
        match catch_unwind(AssertUnwindSafe(|| run_device(blk, comm, &ecfg, start))) {
            Ok(Ok(out)) => Ok(out),
            Ok(Err(e)) => {
                comm.abort();
                Err(e)
            }
            Err(panic) => {
                comm.abort();
                resume_unwind(panic)
            }
        }
    });

    let mut outcomes = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        // Devices that merely saw the abort are not the root cause.
        let root = errors
            .iter()
            .position(|e| !matches!(e, EngineError::Comm(CommError::Aborted)))
            .unwrap_or(0);
        return Err(errors.swap_remove(root).into());
    }

    let leader = &outcomes[0];
    debug_assert!(outcomes
        .iter()
        .all(|o| o.status == leader.status && o.iterations == leader.iterations));
    let x_blocks: Vec<Vec<f64>> = outcomes[..topo.cols].iter().map(|o| o.x.clone()).collect();
    let y_blocks: Vec<Vec<f64>> = outcomes
        .iter()
        .step_by(topo.cols)
        .map(|o| o.y.clone())
        .collect();
    let (x, y) = unpermute_solution(&layout, &x_blocks, &y_blocks)?;
    let counters = outcomes
        .iter()
        .map(|o| DeviceCounters {
            coord: o.coord,
            setup: o.comm_setup,
            main_loop: o.comm_loop,
        })
        .collect();
    let summary = layout.summary(&p.matrix);
    Ok(SolveResult::from_parts(
        p,
        leader,
        x,
        y,
        counters,
        summary,
        start.elapsed().as_secs_f64(),
    ))
}
