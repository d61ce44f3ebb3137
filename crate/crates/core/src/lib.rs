//! Distributed restarted-Halpern PDHG for linear programs on a 2D device grid.
//!
//! The constraint matrix is permuted, cut into an `|R| x |C|` grid of blocks
//! and handed to one worker per block. Workers exchange only axis-scoped
//! sum-reductions through a [`comm::Communicator`]; the in-process
//! [`comm::SimulatedGrid`] backend runs each worker on its own thread with a
//! deterministic reduction order.
//!
//! Entry points: [`solver::solve`] for the distributed solver and
//! [`reference::reference_solve`] for the single-device oracle.

pub mod bench;
pub mod comm;
pub mod engine;
pub mod generators;
pub mod model;
pub mod mps;
pub mod partition;
pub mod reference;
pub mod solver;
pub mod sparse;

pub use comm::{Axis, CommCounters, Communicator, SimulatedGrid};
pub use engine::{KktReport, Status, StepSizes};
pub use model::{LpProblem, ModelError, SparseMatrix};
pub use mps::{parse_mps, read_mps_file, write_mps, MpsError};
pub use partition::{
    GridTopology, LayoutOptions, PartitionLayout, PartitionStrategy, PermutationStrategy,
};
