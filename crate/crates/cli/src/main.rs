//! `gridpdlp` — solve MPS files, inspect layouts, run experiment suites.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gridpdlp::bench::{run_matrix_experiment, write_csv, write_json, BenchSuite};
use gridpdlp::solver::{solve, SolverConfig};
use gridpdlp::{read_mps_file, GridTopology, PartitionStrategy, PermutationStrategy, Status};

const EXIT_OPTIMAL: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_LIMIT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "gridpdlp",
    version,
    about = "Distributed PDHG LP solver on a simulated device grid"
)]
struct Cli {
    /// More log output (-v: per-pass progress, -vv: debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve an MPS file (plain or .gz).
    Solve(SolveArgs),
    /// Print the per-device partition of an MPS file without solving.
    Layout(LayoutArgs),
    /// Run a strategy × grid × instance suite described in TOML.
    Bench(BenchArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Perm {
    None,
    #[value(alias = "full_random")]
    Full,
    #[value(alias = "block_random")]
    Block,
}

impl From<Perm> for PermutationStrategy {
    fn from(p: Perm) -> Self {
        match p {
            Perm::None => PermutationStrategy::None,
            Perm::Full => PermutationStrategy::FullRandom,
            Perm::Block => PermutationStrategy::BlockRandom,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Part {
    Uniform,
    Nnz,
}

impl From<Part> for PartitionStrategy {
    fn from(p: Part) -> Self {
        match p {
            Part::Uniform => PartitionStrategy::Uniform,
            Part::Nnz => PartitionStrategy::Nnz,
        }
    }
}

#[derive(Args, Debug)]
struct LayoutFlags {
    /// Devices available.
    #[arg(long = "procs")]
    procs: Option<usize>,
    /// Fixed RxC grid; bypasses adaptive selection. Defaults --procs to R·C.
    #[arg(long)]
    grid: Option<GridTopology>,
    #[arg(long = "block-size", default_value_t = 64)]
    block_size: usize,
    #[arg(long, value_enum, default_value = "block")]
    perm: Perm,
    #[arg(long, value_enum, default_value = "nnz")]
    partition: Part,
    /// Permutation seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl LayoutFlags {
    fn apply(&self, cfg: &mut SolverConfig) -> Result<()> {
        cfg.layout.block_size = self.block_size;
        cfg.layout.permutation = self.perm.into();
        cfg.layout.partition = self.partition.into();
        cfg.layout.seed = self.seed;
        cfg.grid = self.grid;
        cfg.n_procs = match (self.procs, self.grid) {
            (Some(n), Some(g)) if g.devices() > n => {
                bail!(
                    "--grid {g} needs {} devices but --procs is {n}",
                    g.devices()
                )
            }
            (Some(n), _) => n,
            (None, Some(g)) => g.devices(),
            (None, None) => 1,
        };
        Ok(())
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    file: PathBuf,
    #[command(flatten)]
    layout: LayoutFlags,
    /// Relative KKT tolerance.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long = "max-iters", default_value_t = 100_000)]
    max_iters: usize,
    /// Iterations between KKT/restart passes.
    #[arg(long = "kkt-interval", default_value_t = 64)]
    kkt_interval: usize,
    /// Wall-clock limit in seconds, checked at passes.
    #[arg(long = "time-limit")]
    time_limit: Option<f64>,
    /// Write the full result as JSON (`-` for stdout).
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LayoutArgs {
    file: PathBuf,
    #[command(flatten)]
    layout: LayoutFlags,
    /// Write the layout summary as JSON (`-` for stdout).
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    suite: PathBuf,
    /// Overrides the suite's CSV path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Overrides the suite's JSON path.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Run cells concurrently (wall times become unreliable).
    #[arg(long)]
    parallel: bool,
}

fn write_output(target: &Path, text: &str) -> Result<()> {
    if target == Path::new("-") {
        println!("{text}");
        Ok(())
    } else {
        std::fs::write(target, format!("{text}\n"))
            .with_context(|| format!("writing {}", target.display()))
    }
}

fn run_solve(args: &SolveArgs) -> Result<u8> {
    let problem =
        read_mps_file(&args.file).with_context(|| format!("reading {}", args.file.display()))?;
    let mut cfg = SolverConfig {
        tolerance: args.tol,
        max_iterations: args.max_iters,
        kkt_interval: args.kkt_interval,
        time_limit_seconds: args.time_limit,
        ..SolverConfig::default()
    };
    args.layout.apply(&mut cfg)?;
    let r = solve(&problem, &cfg)?;

    let to_stdout = args.json.as_deref() == Some(Path::new("-"));
    if !to_stdout {
        println!("status      {}", r.status);
        println!("objective   {:.12e}", r.objective);
        println!("dual obj    {:.12e}", r.dual_objective);
        println!(
            "kkt         primal {:.3e}  dual {:.3e}  gap {:.3e}",
            r.kkt.r_primal, r.kkt.r_dual, r.kkt.r_gap
        );
        println!("iterations  {}  restarts {}", r.iterations, r.restarts);
        println!(
            "grid        {}  imbalance {:.3}",
            r.layout.grid, r.layout.imbalance
        );
        println!("wall        {:.3}s", r.wall_seconds);
    }
    if let Some(path) = &args.json {
        write_output(path, &serde_json::to_string_pretty(&r)?)?;
    }
    Ok(match r.status {
        Status::Optimal => EXIT_OPTIMAL,
        Status::IterationLimit | Status::TimeLimit => EXIT_LIMIT,
        Status::NumericalFailure => EXIT_NUMERICAL,
    })
}

fn run_layout(args: &LayoutArgs) -> Result<u8> {
    let problem =
        read_mps_file(&args.file).with_context(|| format!("reading {}", args.file.display()))?;
    let mut cfg = SolverConfig::default();
    args.layout.apply(&mut cfg)?;
    cfg.validate()?;
    let summary = cfg.layout_for(&problem)?.summary(&problem.matrix);
    if let Some(path) = &args.json {
        write_output(path, &serde_json::to_string_pretty(&summary)?)?;
        if path == Path::new("-") {
            return Ok(EXIT_OPTIMAL);
        }
    }
    println!(
        "grid {}  permutation {}  partition {}  block {}  seed {}",
        summary.grid,
        summary.permutation.as_str(),
        summary.partition.as_str(),
        summary.block_size,
        summary.seed
    );
    println!("{:>8} {:>8} {:>8} {:>10}", "device", "rows", "cols", "nnz");
    for d in &summary.devices {
        println!(
            "{:>8} {:>8} {:>8} {:>10}",
            format!("({},{})", d.coord.0, d.coord.1),
            d.rows,
            d.cols,
            d.nnz
        );
    }
    println!(
        "nnz max {}  mean {:.1}  max/mean {:.3}",
        summary.nnz_max, summary.nnz_mean, summary.imbalance
    );
    Ok(EXIT_OPTIMAL)
}

fn run_bench(args: &BenchArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&args.suite)
        .with_context(|| format!("reading {}", args.suite.display()))?;
    let mut suite: BenchSuite =
        toml::from_str(&text).with_context(|| format!("parsing {}", args.suite.display()))?;
    suite.parallel |= args.parallel;
    if args.csv.is_some() {
        suite.csv = args.csv.clone();
    }
    if args.json.is_some() {
        suite.json = args.json.clone();
    }
    let base = args.suite.parent().unwrap_or(Path::new("."));
    let report = run_matrix_experiment(&suite, base)?;

    println!(
        "{:<16} {:<13} {:>6} {:>7} {:>10} {:>10} {:>9}",
        "permutation", "partition", "grid", "solved", "sgm10 s", "sgm10 it", "max/mean"
    );
    for c in &report.cells {
        println!(
            "{:<16} {:<13} {:>6} {:>3}/{:<3} {:>10.4} {:>10.1} {:>9.3}{}",
            c.permutation.as_str(),
            c.partition.as_str(),
            c.grid,
            c.solved,
            c.instances,
            c.sgm10_seconds,
            c.sgm10_iterations,
            c.mean_imbalance,
            if c.unsolved_at_limit > 0 {
                "  (unsolved counted at limit)"
            } else {
                ""
            }
        );
    }
    for r in report.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "{} {}: {}",
            r.instance,
            r.grid,
            r.error.as_deref().unwrap_or_default()
        );
    }
    if let Some(p) = &suite.csv {
        write_csv(&report.rows, p)?;
    }
    if let Some(p) = &suite.json {
        write_json(&report, p)?;
    }
    Ok(EXIT_OPTIMAL)
}

/// `a: b: c`, skipping causes whose text the parent message already embeds.
fn render_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !prev.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        prev = msg;
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OPTIMAL
            });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Solve(a) => run_solve(a),
        Command::Layout(a) => run_layout(a),
        Command::Bench(a) => run_bench(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", render_chain(&e));
            ExitCode::from(EXIT_USAGE)
        }
    }
}
