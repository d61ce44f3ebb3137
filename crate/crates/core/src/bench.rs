//! Strategy × grid × instance experiment matrix with SGM10 aggregation.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generators::{generate, GeneratorError, GeneratorSpec};
use crate::model::LpProblem;
use crate::mps::{read_mps_file, MpsError};
use crate::partition::{GridTopology, PartitionStrategy, PermutationStrategy};
use crate::solver::{solve, SolverConfig};

/// Shift used by [`sgm10`].
pub const SGM_SHIFT: f64 = 10.0;

/// `exp(mean(ln(v + shift))) - shift`; 0 for an empty slice.
pub fn shifted_geometric_mean(values: &[f64], shift: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    // Exact for identical inputs, where exp∘ln would otherwise round.
    if values.iter().all(|v| v.to_bits() == values[0].to_bits()) {
        return values[0];
    }
    let mean_log = values.iter().map(|v| (v + shift).ln()).sum::<f64>() / values.len() as f64;
    mean_log.exp() - shift
}

/// Shifted geometric mean with shift 10.
pub fn sgm10(values: &[f64]) -> f64 {
    shifted_geometric_mean(values, SGM_SHIFT)
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("instance {name}: {source}")]
    Generator {
        name: String,
        #[source]
        source: GeneratorError,
    },
    #[error("instance {path}: {source}")]
    Mps {
        path: String,
        #[source]
        source: MpsError,
    },
    #[error("suite: {0}")]
    Suite(String),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Where an instance comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceSource {
    /// An MPS file; relative paths resolve against the suite's base directory.
    Mps {
        mps: PathBuf,
    },
    Generated(GeneratorSpec),
}

impl InstanceSource {
    pub fn name(&self) -> String {
        match self {
            InstanceSource::Mps { mps } => mps
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| mps.display().to_string()),
            InstanceSource::Generated(spec) => spec.name(),
        }
    }

    pub fn load(&self, base_dir: &Path) -> Result<LpProblem, BenchError> {
        match self {
            InstanceSource::Mps { mps } => {
                let path = base_dir.join(mps);
                read_mps_file(&path).map_err(|source| BenchError::Mps {
                    path: path.display().to_string(),
                    source,
                })
            }
            InstanceSource::Generated(spec) => {
                generate(spec).map_err(|source| BenchError::Generator {
                    name: spec.name(),
                    source,
                })
            }
        }
    }
}

/// One (permutation, partition) cell of the strategy table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Strategy {
    pub permutation: PermutationStrategy,
    pub partition: PartitionStrategy,
}

impl Strategy {
    /// All six combinations, permutation-major.
    pub fn all() -> Vec<Strategy> {
        PermutationStrategy::ALL
            .iter()
            .flat_map(|&permutation| {
                PartitionStrategy::ALL
                    .iter()
                    .map(move |&partition| Strategy {
                        permutation,
                        partition,
                    })
            })
            .collect()
    }

    pub fn label(&self) -> String {
        format!("{}+{}", self.permutation.as_str(), self.partition.as_str())
    }
}

/// An experiment description, typically read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSuite {
    pub instances: Vec<InstanceSource>,
    pub strategies: Vec<Strategy>,
    /// Explicit grids; when empty, each solve picks a grid for `solver.n_procs`.
    pub grids: Vec<GridTopology>,
    pub solver: SolverConfig,
    /// Run cells concurrently. Wall times then interfere; use for property runs only.
    pub parallel: bool,
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

impl Default for BenchSuite {
    fn default() -> Self {
        BenchSuite {
            instances: Vec::new(),
            strategies: Strategy::all(),
            grids: Vec::new(),
            solver: SolverConfig::default(),
            parallel: false,
            csv: None,
            json: None,
        }
    }
}

/// One solve of the matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub instance: String,
    pub permutation: PermutationStrategy,
    pub partition: PartitionStrategy,
    pub grid: String,
    /// A [`crate::Status`] name, or `error`.
    pub status: String,
    pub solved: bool,
    pub objective: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub wall_seconds: f64,
    pub nnz_max: usize,
    pub nnz_mean: f64,
    pub imbalance: f64,
    /// Main-loop vector all-reduces on device `(0, 0)`, all axes.
    pub vector_allreduces: u64,
    /// Main-loop scalar all-reduces on device `(0, 0)`, all axes.
    pub scalar_allreduces: u64,
    pub error: Option<String>,
}

/// Aggregate over the instances of one (strategy, grid) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub permutation: PermutationStrategy,
    pub partition: PartitionStrategy,
    pub grid: String,
    pub instances: usize,
    pub solved: usize,
    /// SGM10 of wall seconds; unsolved instances count at the time limit
    /// (or their own wall time when no limit is set).
    pub sgm10_seconds: f64,
    pub sgm10_iterations: f64,
    /// Unsolved instances folded into the aggregate at the limit.
    pub unsolved_at_limit: usize,
    pub mean_imbalance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub cells: Vec<CellSummary>,
}

struct Job<'a> {
    instance: usize,
    strategy: Strategy,
    grid: Option<GridTopology>,
    problem: &'a LpProblem,
}

fn run_job(job: &Job<'_>, name: &str, base: &SolverConfig) -> BenchRow {
    let mut cfg = base.clone();
    cfg.layout.permutation = job.strategy.permutation;
    cfg.layout.partition = job.strategy.partition;
    if let Some(g) = job.grid {
        cfg.grid = Some(g);
        cfg.n_procs = cfg.n_procs.max(g.devices());
    }
    let grid_label =
        |g: Option<GridTopology>| g.map(|g| g.to_string()).unwrap_or_else(|| "auto".into());
    match solve(job.problem, &cfg) {
        Ok(r) => {
            let l = &r.comm_loop;
            BenchRow {
                instance: name.to_string(),
                permutation: job.strategy.permutation,
                partition: job.strategy.partition,
                grid: r.layout.grid.to_string(),
                status: r.status.as_str().to_string(),
                solved: r.status == crate::engine::Status::Optimal,
                objective: r.objective,
                iterations: r.iterations,
                restarts: r.restarts,
                wall_seconds: r.wall_seconds,
                nnz_max: r.layout.nnz_max,
                nnz_mean: r.layout.nnz_mean,
                imbalance: r.layout.imbalance,
                vector_allreduces: l.r.vector_allreduce_calls
                    + l.c.vector_allreduce_calls
                    + l.g.vector_allreduce_calls,
                scalar_allreduces: l.r.scalar_allreduce_calls
                    + l.c.scalar_allreduce_calls
                    + l.g.scalar_allreduce_calls,
                error: None,
            }
        }
        Err(e) => BenchRow {
            instance: name.to_string(),
            permutation: job.strategy.permutation,
            partition: job.strategy.partition,
            grid: grid_label(job.grid),
            status: "error".into(),
            solved: false,
            objective: f64::NAN,
            iterations: 0,
            restarts: 0,
            wall_seconds: 0.0,
            nnz_max: 0,
            nnz_mean: 0.0,
            imbalance: f64::NAN,
            vector_allreduces: 0,
            scalar_allreduces: 0,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every (instance, strategy, grid) combination and aggregates per cell.
///
/// Solve failures become rows with status `error` rather than aborting the run;
/// only unreadable instances are errors.
pub fn run_matrix_experiment(
    suite: &BenchSuite,
    base_dir: &Path,
) -> Result<BenchReport, BenchError> {
    if suite.strategies.is_empty() {
        return Err(BenchError::Suite("no strategies".into()));
    }
    let names: Vec<String> = suite.instances.iter().map(InstanceSource::name).collect();
    let problems = suite
        .instances
        .iter()
        .map(|s| s.load(base_dir))
        .collect::<Result<Vec<_>, _>>()?;
    let grids: Vec<Option<GridTopology>> = if suite.grids.is_empty() {
        vec![None]
    } else {
        suite.grids.iter().copied().map(Some).collect()
    };

    let mut jobs = Vec::new();
    for &grid in &grids {
        for &strategy in &suite.strategies {
            for (instance, problem) in problems.iter().enumerate() {
                jobs.push(Job {
                    instance,
                    strategy,
                    grid,
                    problem,
                });
            }
        }
    }

    let rows: Vec<BenchRow> = if suite.parallel {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<BenchRow>>> = Mutex::new(vec![None; jobs.len()]);
        let workers = std::thread::available_parallelism()
            .map_or(1, |n| n.get())
            .min(jobs.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    let Some(job) = jobs.get(k) else { break };
                    let row = run_job(job, &names[job.instance], &suite.solver);
                    slots.lock().expect("bench worker panicked")[k] = Some(row);
                });
            }
        });
        slots
            .into_inner()
            .expect("bench worker panicked")
            .into_iter()
            .map(|r| r.expect("every job ran"))
            .collect()
    } else {
        jobs.iter()
            .map(|job| {
                let row = run_job(job, &names[job.instance], &suite.solver);
                log::info!(
                    "{} {} {} {} iters={} {:.3}s",
                    row.instance,
                    job.strategy.label(),
                    row.grid,
                    row.status,
                    row.iterations,
                    row.wall_seconds
                );
                row
            })
            .collect()
    };

    let per_cell = problems.len().max(1);
    let cells = rows
        .chunks(per_cell)
        .filter(|c| !c.is_empty())
        .map(|chunk| summarize(chunk, suite.solver.time_limit_seconds))
        .collect();
    Ok(BenchReport { rows, cells })
}

fn summarize(rows: &[BenchRow], time_limit: Option<f64>) -> CellSummary {
    let mut times = Vec::with_capacity(rows.len());
    let mut unsolved = 0;
    for r in rows {
        if r.solved {
            times.push(r.wall_seconds);
        } else {
            unsolved += 1;
            times.push(time_limit.unwrap_or(r.wall_seconds));
        }
    }
    let iterations: Vec<f64> = rows.iter().map(|r| r.iterations as f64).collect();
    let finite: Vec<f64> = rows
        .iter()
        .map(|r| r.imbalance)
        .filter(|v| v.is_finite())
        .collect();
    CellSummary {
        permutation: rows[0].permutation,
        partition: rows[0].partition,
        grid: rows[0].grid.clone(),
        instances: rows.len(),
        solved: rows.len() - unsolved,
        sgm10_seconds: sgm10(&times),
        sgm10_iterations: sgm10(&iterations),
        unsolved_at_limit: unsolved,
        mean_imbalance: if finite.is_empty() {
            f64::NAN
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        },
    }
}

/// Writes one CSV line per solve.
pub fn write_csv(rows: &[BenchRow], path: &Path) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

pub fn write_json(report: &BenchReport, path: &Path) -> Result<(), BenchError> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })
}
