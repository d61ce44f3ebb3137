//! Axis-scoped sum-AllReduce over a 2D device grid.
//!
//! Device `(i, j)` belongs to three groups: the `R` group of column `j` (all
//! rows), the `C` group of row `i` (all columns) and the global `G` group.
//! Reductions add contributions in ascending device order within the group, so
//! results are bit-identical on every member and across runs.
//!
//! [`SimulatedGrid`] is the in-process backend: one thread per device, with
//! every collective a rendezvous guarded by a mutex/condvar pair. Solver code
//! only sees the [`Communicator`] trait.

use std::cell::{Cell, RefCell};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partition::GridTopology;

/// Reduction scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    /// Over the row axis: sums `T[k, j]` for all `k`.
    R,
    /// Over the column axis: sums `T[i, k]` for all `k`.
    C,
    /// Over the whole grid.
    G,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::R, Axis::C, Axis::G];

    fn index(self) -> usize {
        match self {
            Axis::R => 0,
            Axis::C => 1,
            Axis::G => 2,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommError {
    #[error("collective mismatch on axis {axis:?}: {detail}")]
    Mismatch { axis: Axis, detail: String },
    #[error("device {coord:?} timed out after {timeout:?} waiting on axis {axis:?}")]
    Timeout {
        coord: (usize, usize),
        axis: Axis,
        timeout: Duration,
    },
    #[error("grid aborted by another device")]
    Aborted,
}

/// Traffic tallies for one axis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisCounters {
    pub vector_allreduce_calls: u64,
    pub scalar_allreduce_calls: u64,
    /// Logical FP64 words contributed, vector and scalar calls combined.
    pub elements_reduced: u64,
    pub barriers: u64,
}

/// Per-device instrumentation, one entry per axis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommCounters {
    pub r: AxisCounters,
    pub c: AxisCounters,
    pub g: AxisCounters,
}

impl CommCounters {
    pub fn axis(&self, axis: Axis) -> &AxisCounters {
        match axis {
            Axis::R => &self.r,
            Axis::C => &self.c,
            Axis::G => &self.g,
        }
    }

    fn axis_mut(&mut self, axis: Axis) -> &mut AxisCounters {
        match axis {
            Axis::R => &mut self.r,
            Axis::C => &mut self.c,
            Axis::G => &mut self.g,
        }
    }

    pub fn vector_calls(&self) -> u64 {
        Axis::ALL
            .iter()
            .map(|&a| self.axis(a).vector_allreduce_calls)
            .sum()
    }

    pub fn scalar_calls(&self) -> u64 {
        Axis::ALL
            .iter()
            .map(|&a| self.axis(a).scalar_allreduce_calls)
            .sum()
    }

    /// Component-wise `self - earlier`.
    pub fn since(&self, earlier: &CommCounters) -> CommCounters {
        let diff = |a: &AxisCounters, b: &AxisCounters| AxisCounters {
            vector_allreduce_calls: a.vector_allreduce_calls - b.vector_allreduce_calls,
            scalar_allreduce_calls: a.scalar_allreduce_calls - b.scalar_allreduce_calls,
            elements_reduced: a.elements_reduced - b.elements_reduced,
            barriers: a.barriers - b.barriers,
        };
        CommCounters {
            r: diff(&self.r, &earlier.r),
            c: diff(&self.c, &earlier.c),
            g: diff(&self.g, &earlier.g),
        }
    }
}

/// The collective contract the solver is written against.
///
/// Every member of a group must issue the same operations, with equal
/// lengths, in the same order.
pub trait Communicator {
    fn topology(&self) -> GridTopology;

    /// This device's `(row, column)` grid coordinate.
    fn coord(&self) -> (usize, usize);

    /// In-place vector sum over `axis`.
    fn allreduce_sum(&self, axis: Axis, buf: &mut [f64]) -> Result<(), CommError>;

    /// In-place sum of a short host-side vector of scalars; tallied as one
    /// scalar reduction regardless of length.
    fn allreduce_sum_scalars(&self, axis: Axis, buf: &mut [f64]) -> Result<(), CommError>;

    fn allreduce_sum_scalar(&self, axis: Axis, x: f64) -> Result<f64, CommError> {
        let mut buf = [x];
        self.allreduce_sum_scalars(axis, &mut buf)?;
        Ok(buf[0])
    }

    fn barrier(&self) -> Result<(), CommError>;

    fn counters(&self) -> CommCounters;

    fn group_size(&self, axis: Axis) -> usize {
        let t = self.topology();
        match axis {
            Axis::R => t.rows,
            Axis::C => t.cols,
            Axis::G => t.rows * t.cols,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OpKind {
    Vector,
    Scalar,
    Barrier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct OpSig {
    kind: OpKind,
    len: usize,
    seq: u64,
}

struct GroupState {
    generation: u64,
    arrived: usize,
    sig: Option<OpSig>,
    slots: Vec<Option<Vec<f64>>>,
    result: Arc<Vec<f64>>,
}

struct Group {
    members: usize,
    state: Mutex<GroupState>,
    cv: Condvar,
}

impl Group {
    fn new(members: usize) -> Self {
        Group {
            members,
            state: Mutex::new(GroupState {
                generation: 0,
                arrived: 0,
                sig: None,
                slots: vec![None; members],
                result: Arc::new(Vec::new()),
            }),
            cv: Condvar::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, GroupState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

struct Shared {
    topology: GridTopology,
    timeout: Duration,
    aborted: AtomicBool,
    /// `R` groups indexed by column, `C` groups by row, then the single `G` group.
    col_groups: Vec<Group>,
    row_groups: Vec<Group>,
    global: Group,
}

impl Shared {
    fn abort(&self) {
        self.aborted.store(true, Ordering::SeqCst);
        for g in self
            .col_groups
            .iter()
            .chain(&self.row_groups)
            .chain(std::iter::once(&self.global))
        {
            let _guard = g.lock();
            g.cv.notify_all();
        }
    }
}

/// Factory for the in-process device grid.
pub struct SimulatedGrid;

impl SimulatedGrid {
    /// One [`DeviceComm`] per coordinate, row-major.
    pub fn create(topology: GridTopology, timeout: Duration) -> Vec<DeviceComm> {
        let shared = Arc::new(Shared {
            topology,
            timeout,
            aborted: AtomicBool::new(false),
            col_groups: (0..topology.cols)
                .map(|_| Group::new(topology.rows))
                .collect(),
            row_groups: (0..topology.rows)
                .map(|_| Group::new(topology.cols))
                .collect(),
            global: Group::new(topology.rows * topology.cols),
        });
        let mut out = Vec::with_capacity(topology.rows * topology.cols);
        for i in 0..topology.rows {
            for j in 0..topology.cols {
                out.push(DeviceComm {
                    shared: Arc::clone(&shared),
                    coord: (i, j),
                    seq: [Cell::new(0), Cell::new(0), Cell::new(0)],
                    counters: RefCell::new(CommCounters::default()),
                });
            }
        }
        out
    }

    /// A lone device; every collective is the identity.
    pub fn single() -> DeviceComm {
        Self::create(GridTopology { rows: 1, cols: 1 }, Duration::from_secs(60))
            .pop()
            .unwrap()
    }
}

/// A device's handle on a [`SimulatedGrid`]. Owned by exactly one worker thread.
pub struct DeviceComm {
    shared: Arc<Shared>,
    coord: (usize, usize),
    seq: [Cell<u64>; 3],
    counters: RefCell<CommCounters>,
}

impl std::fmt::Debug for DeviceComm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeviceComm")
            .field("coord", &self.coord)
            .field("topology", &self.shared.topology)
            .finish()
    }
}

impl DeviceComm {
    /// Signals every other device to stop waiting; used when this worker bails out.
    pub fn abort(&self) {
        self.shared.abort();
    }

    fn group_and_rank(&self, axis: Axis) -> (&Group, usize) {
        let (i, j) = self.coord;
        match axis {
            Axis::R => (&self.shared.col_groups[j], i),
            Axis::C => (&self.shared.row_groups[i], j),
            Axis::G => (&self.shared.global, i * self.shared.topology.cols + j),
        }
    }

    fn collective(&self, axis: Axis, kind: OpKind, buf: &mut [f64]) -> Result<(), CommError> {
        let seq = self.seq[axis.index()].get();
        self.seq[axis.index()].set(seq + 1);
        {
            let mut c = self.counters.borrow_mut();
            let ac = c.axis_mut(axis);
            match kind {
                OpKind::Vector => ac.vector_allreduce_calls += 1,
                OpKind::Scalar => ac.scalar_allreduce_calls += 1,
                OpKind::Barrier => ac.barriers += 1,
            }
            ac.elements_reduced += buf.len() as u64;
        }

        let (group, rank) = self.group_and_rank(axis);
        if group.members == 1 {
            return Ok(());
        }
        if self.shared.aborted.load(Ordering::SeqCst) {
            return Err(CommError::Aborted);
        }

        let sig = OpSig {
            kind,
            len: buf.len(),
            seq,
        };
        let mut st = group.lock();
        match st.sig {
            None => st.sig = Some(sig),
            Some(expected) if expected != sig => {
                drop(st);
                self.shared.abort();
                return Err(CommError::Mismatch {
                    axis,
                    detail: format!(
                        "device {:?} issued {sig:?}, group expects {expected:?}",
                        self.coord
                    ),
                });
            }
            Some(_) => {}
        }
        st.slots[rank] = Some(buf.to_vec());
        st.arrived += 1;

        if st.arrived == group.members {
            let mut sum = vec![0.0; buf.len()];
            for slot in st.slots.iter_mut() {
                let part = slot.take().expect("all members arrived");
                for (s, p) in sum.iter_mut().zip(&part) {
                    *s += p;
                }
            }
            buf.copy_from_slice(&sum);
            st.result = Arc::new(sum);
            st.arrived = 0;
            st.sig = None;
            st.generation += 1;
            group.cv.notify_all();
            return Ok(());
        }

        let generation = st.generation;
        let deadline = Instant::now() + self.shared.timeout;
        loop {
            let now = Instant::now();
            if now >= deadline {
                drop(st);
                self.shared.abort();
                return Err(CommError::Timeout {
                    coord: self.coord,
                    axis,
                    timeout: self.shared.timeout,
                });
            }
            let (guard, _) = group
                .cv
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|p| p.into_inner());
            st = guard;
            if st.generation != generation {
                // The next round cannot complete without us, so `result` is still ours.
                buf.copy_from_slice(&st.result);
                return Ok(());
            }
            if self.shared.aborted.load(Ordering::SeqCst) {
                return Err(CommError::Aborted);
            }
        }
    }
}

impl Communicator for DeviceComm {
    fn topology(&self) -> GridTopology {
        self.shared.topology
    }

    fn coord(&self) -> (usize, usize) {
        self.coord
    }

    fn allreduce_sum(&self, axis: Axis, buf: &mut [f64]) -> Result<(), CommError> {
        self.collective(axis, OpKind::Vector, buf)
    }

    fn allreduce_sum_scalars(&self, axis: Axis, buf: &mut [f64]) -> Result<(), CommError> {
        self.collective(axis, OpKind::Scalar, buf)
    }

    fn barrier(&self) -> Result<(), CommError> {
        self.collective(Axis::G, OpKind::Barrier, &mut [])
    }

    fn counters(&self) -> CommCounters {
        *self.counters.borrow()
    }
}

/// Runs `body` on every device of a fresh grid, one scoped thread each, and
/// returns the results in row-major device order.
pub fn run_on_grid<T, F>(topology: GridTopology, timeout: Duration, body: F) -> Vec<T>
where
    T: Send,
    F: Fn(&DeviceComm) -> T + Sync,
{
    let comms = SimulatedGrid::create(topology, timeout);
    if comms.len() == 1 {
        return vec![body(&comms[0])];
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = comms
            .into_iter()
            .map(|comm| {
                let body = &body;
                s.spawn(move || body(&comm))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("device worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: usize, cols: usize) -> GridTopology {
        GridTopology { rows, cols }
    }

    const T: Duration = Duration::from_secs(10);

    #[test]
    fn axis_sums_on_2x2() {
        // T = [[1, 2], [3, 4]]
        let out = run_on_grid(grid(2, 2), T, |c| {
            let (i, j) = c.coord();
            let v = (i * 2 + j + 1) as f64;
            let r = c.allreduce_sum_scalar(Axis::R, v).unwrap();
            let g = c.allreduce_sum_scalar(Axis::G, v).unwrap();
            let mut cv = [v];
            c.allreduce_sum(Axis::C, &mut cv).unwrap();
            (c.coord(), r, cv[0], g)
        });
        for ((_, j), r, _, g) in &out {
            assert_eq!(*r, if *j == 0 { 4.0 } else { 6.0 });
            assert_eq!(*g, 10.0);
        }
        for ((i, _), _, cs, _) in &out {
            assert_eq!(*cs, if *i == 0 { 3.0 } else { 7.0 });
        }
    }

    #[test]
    fn scalar_examples() {
        let ones = run_on_grid(grid(2, 2), T, |c| {
            c.allreduce_sum_scalar(Axis::G, 1.0).unwrap()
        });
        assert_eq!(ones, vec![4.0; 4]);
        let pair = run_on_grid(grid(1, 2), T, |c| {
            let v = if c.coord().1 == 0 { 2.0 } else { 5.0 };
            c.allreduce_sum_scalar(Axis::C, v).unwrap()
        });
        assert_eq!(pair, vec![7.0, 7.0]);
        let solo = SimulatedGrid::single();
        assert_eq!(solo.allreduce_sum_scalar(Axis::G, 3.25).unwrap(), 3.25);
    }

    #[test]
    fn singleton_group_is_identity() {
        let c = SimulatedGrid::single();
        let mut v = vec![1.5, -2.0, 3.0];
        for axis in Axis::ALL {
            c.allreduce_sum(axis, &mut v).unwrap();
        }
        assert_eq!(v, vec![1.5, -2.0, 3.0]);
        assert_eq!(c.counters().vector_calls(), 3);
        assert_eq!(c.counters().r.elements_reduced, 3);
    }

    #[test]
    fn barrier_and_counters_agree() {
        let out = run_on_grid(grid(2, 3), T, |c| {
            let mut v = vec![1.0; 5];
            c.allreduce_sum(Axis::R, &mut v).unwrap();
            c.allreduce_sum_scalar(Axis::G, 2.0).unwrap();
            c.barrier().unwrap();
            c.counters()
        });
        assert!(out.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(out[0].r.vector_allreduce_calls, 1);
        assert_eq!(out[0].r.elements_reduced, 5);
        assert_eq!(out[0].g.scalar_allreduce_calls, 1);
        assert_eq!(out[0].g.barriers, 1);
    }

    #[test]
    fn length_mismatch_is_detected() {
        let out = run_on_grid(grid(1, 2), T, |c| {
            let mut v = vec![0.0; 1 + c.coord().1];
            c.allreduce_sum(Axis::C, &mut v)
        });
        assert!(out
            .iter()
            .any(|r| matches!(r, Err(CommError::Mismatch { .. }))));
        assert!(out.iter().all(|r| r.is_err()));
    }

    #[test]
    fn missing_member_times_out() {
        let out = run_on_grid(grid(1, 2), Duration::from_millis(50), |c| {
            if c.coord().1 == 0 {
                c.allreduce_sum_scalar(Axis::C, 1.0).map(|_| ())
            } else {
                Ok(())
            }
        });
        assert!(matches!(out[0], Err(CommError::Timeout { .. })));
    }

    #[test]
    fn sums_in_ascending_device_order() {
        // 1e16 + 1 - 1e16 depends on association; ascending order gives 0.
        let vals = [1e16, 1.0, -1e16];
        let out = run_on_grid(grid(3, 1), T, |c| {
            c.allreduce_sum_scalar(Axis::R, vals[c.coord().0]).unwrap()
        });
        let expected = (1e16 + 1.0) + -1e16;
        assert!(out.iter().all(|&v| v == expected));
    }
}
