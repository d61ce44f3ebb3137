//! Dense, single-threaded oracles written directly from the formulas, sharing
//! no code with the solver beyond the problem type.
#![allow(dead_code)]

use std::time::Duration;

use gridpdlp::comm::{run_on_grid, DeviceComm};
use gridpdlp::generators::{generate, GeneratorSpec};
use gridpdlp::partition::{distribute, LocalBlock, PartitionLayout};
use gridpdlp::LpProblem;

pub struct Dense {
    pub a: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub lv: Vec<f64>,
    pub uv: Vec<f64>,
    pub lc: Vec<f64>,
    pub uc: Vec<f64>,
}

fn clip(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

fn nrm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct DenseKkt {
    pub r_primal: f64,
    pub r_dual: f64,
    pub r_gap: f64,
    pub obj_primal: f64,
    pub obj_dual: f64,
}

impl DenseKkt {
    pub fn overall(&self) -> f64 {
        self.r_primal.max(self.r_dual).max(self.r_gap)
    }
}

impl Dense {
    pub fn new(p: &LpProblem) -> Self {
        Dense {
            a: p.matrix.to_dense(),
            c: p.objective.clone(),
            lv: p.var_lower.clone(),
            uv: p.var_upper.clone(),
            lc: p.con_lower.clone(),
            uc: p.con_upper.clone(),
        }
    }

    pub fn m(&self) -> usize {
        self.a.len()
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn ax(&self, x: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn aty(&self, y: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|j| (0..self.m()).map(|i| self.a[i][j] * y[i]).sum())
            .collect()
    }

    /// Relative KKT residuals without the objective constant.
    pub fn kkt(&self, tau: f64, x: &[f64], y: &[f64]) -> DenseKkt {
        let ax = self.ax(x);
        let rp: Vec<f64> = (0..self.m())
            .map(|i| ax[i] - clip(ax[i], self.lc[i], self.uc[i]))
            .collect();
        let bnorm = nrm(&self
            .lc
            .iter()
            .chain(&self.uc)
            .copied()
            .filter(|v| v.is_finite())
            .collect::<Vec<_>>());
        let g: Vec<f64> = self.c.iter().zip(self.aty(y)).map(|(c, a)| c - a).collect();
        let mut rd = vec![0.0; self.n()];
        let mut sx = 0.0;
        for j in 0..self.n() {
            let t = x[j] - tau * g[j];
            let pj = clip(t, self.lv[j], self.uv[j]);
            rd[j] = (pj - x[j]) / tau;
            sx += (pj - t) / tau * x[j];
        }
        let mut support = 0.0;
        let mut infinite = false;
        for ((&yi, &l), &u) in y.iter().zip(&self.lc).zip(&self.uc) {
            if yi < 0.0 {
                if u.is_finite() {
                    support += u * -yi;
                } else {
                    infinite = true;
                }
            }
            if yi > 0.0 {
                if l.is_finite() {
                    support -= l * yi;
                } else {
                    infinite = true;
                }
            }
        }
        let cx: f64 = self.c.iter().zip(x).map(|(a, b)| a * b).sum();
        let (gap, dual) = if infinite {
            (f64::INFINITY, f64::NEG_INFINITY)
        } else {
            let d = sx - support;
            ((cx - d).abs() / (1.0 + cx.abs().max(d.abs())), d)
        };
        DenseKkt {
            r_primal: nrm(&rp) / (1.0 + bnorm),
            r_dual: nrm(&rd) / (1.0 + nrm(&self.c)),
            r_gap: gap,
            obj_primal: cx,
            obj_dual: dual,
        }
    }

    /// One vanilla PDHG step `(x, y) → (x⁺, y⁺)`.
    pub fn pdhg(&self, tau: f64, sigma: f64, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let aty = self.aty(y);
        let xn: Vec<f64> = (0..self.n())
            .map(|j| clip(x[j] - tau * (self.c[j] - aty[j]), self.lv[j], self.uv[j]))
            .collect();
        let xbar: Vec<f64> = xn.iter().zip(x).map(|(a, b)| 2.0 * a - b).collect();
        let z = self.ax(&xbar);
        let yn = (0..self.m())
            .map(|i| {
                y[i] - sigma * z[i] - sigma * clip(y[i] / sigma - z[i], -self.uc[i], -self.lc[i])
            })
            .collect();
        (xn, yn)
    }

    /// `‖(Δx, Δy)‖_P` with `P = [[ω/η·I, Aᵀ], [A, 1/(ηω)·I]]`.
    pub fn p_norm(&self, eta: f64, omega: f64, dx: &[f64], dy: &[f64]) -> f64 {
        let adx = self.ax(dx);
        let q = omega / eta * dx.iter().map(|v| v * v).sum::<f64>()
            + dy.iter().map(|v| v * v).sum::<f64>() / (eta * omega)
            + 2.0 * adx.iter().zip(dy).map(|(a, b)| a * b).sum::<f64>();
        q.max(0.0).sqrt()
    }
}

/// Seeded dense-ish LPs used across the suites.
pub fn random_lp(seed: u64) -> LpProblem {
    let m = 30 + (seed as usize % 21);
    let n = 30 + (seed as usize * 7 % 21);
    generate(&GeneratorSpec::UniformRandom {
        m,
        n,
        nnz: m * n * 3 / 10,
        seed,
        equality_fraction: 0.5,
    })
    .unwrap()
}

/// Runs `body` once per device of `layout`'s grid, with that device's block.
pub fn on_blocks<T, F>(p: &LpProblem, layout: &PartitionLayout, body: F) -> Vec<T>
where
    T: Send,
    F: Fn(&LocalBlock, &DeviceComm) -> T + Sync,
{
    let blocks = distribute(p, layout);
    let cols = layout.topology.cols;
    run_on_grid(layout.topology, Duration::from_secs(60), |comm| {
        let (i, j) = gridpdlp::Communicator::coord(comm);
        body(&blocks[i * cols + j], comm)
    })
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}
