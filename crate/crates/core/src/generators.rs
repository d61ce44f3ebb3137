//! Seeded synthetic LP instances with known structure.
//!
//! All generators except [`GeneratorSpec::BoxKnownOptimum`] plant a point
//! `x̂` strictly inside a finite variable box and derive the row bounds from
//! `Ax̂`, so every instance is feasible and, being boxed, bounded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LpProblem, ModelError, SparseMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("invalid generator spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn default_eq() -> f64 {
    0.5
}

/// What to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    /// `blocks` dense-ish `block_rows x block_cols` blocks on the diagonal.
    BlockDiagonal {
        blocks: usize,
        block_rows: usize,
        block_cols: usize,
        density: f64,
        seed: u64,
        #[serde(default = "default_eq")]
        equality_fraction: f64,
    },
    /// Diagonal blocks whose column ranges extend `overlap` columns into the
    /// next block.
    Staircase {
        blocks: usize,
        block_rows: usize,
        block_cols: usize,
        overlap: usize,
        density: f64,
        seed: u64,
        #[serde(default = "default_eq")]
        equality_fraction: f64,
    },
    /// `nnz` entries at uniformly random distinct positions.
    UniformRandom {
        m: usize,
        n: usize,
        nnz: usize,
        seed: u64,
        #[serde(default = "default_eq")]
        equality_fraction: f64,
    },
    /// Box LP whose `rows` constraints can never bind; the optimum sits at the
    /// box corner picked by the signs of `c`.
    #[serde(alias = "box_lp_known_optimum")]
    BoxKnownOptimum { n: usize, rows: usize, seed: u64 },
}

impl GeneratorSpec {
    pub fn seed(&self) -> u64 {
        match *self {
            GeneratorSpec::BlockDiagonal { seed, .. }
            | GeneratorSpec::Staircase { seed, .. }
            | GeneratorSpec::UniformRandom { seed, .. }
            | GeneratorSpec::BoxKnownOptimum { seed, .. } => seed,
        }
    }

    pub fn name(&self) -> String {
        match self {
            GeneratorSpec::BlockDiagonal {
                blocks,
                block_rows,
                block_cols,
                seed,
                ..
            } => {
                format!("blockdiag_{blocks}x{block_rows}x{block_cols}_s{seed}")
            }
            GeneratorSpec::Staircase {
                blocks,
                block_rows,
                block_cols,
                overlap,
                seed,
                ..
            } => {
                format!("staircase_{blocks}x{block_rows}x{block_cols}_o{overlap}_s{seed}")
            }
            GeneratorSpec::UniformRandom {
                m, n, nnz, seed, ..
            } => format!("uniform_{m}x{n}_nnz{nnz}_s{seed}"),
            GeneratorSpec::BoxKnownOptimum { n, rows, seed } => format!("box_{n}_r{rows}_s{seed}"),
        }
    }
}

fn check_density(density: f64) -> Result<(), GeneratorError> {
    if density > 0.0 && density <= 1.0 {
        Ok(())
    } else {
        Err(GeneratorError::Invalid(format!(
            "density must be in (0, 1], got {density}"
        )))
    }
}

fn check_fraction(f: f64) -> Result<(), GeneratorError> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(GeneratorError::Invalid(format!(
            "equality_fraction must be in [0, 1], got {f}"
        )))
    }
}

/// Nonzero value with magnitude in `[0.1, 1]` and random sign.
fn entry(rng: &mut ChaCha8Rng) -> f64 {
    let v = rng.gen_range(0.1..=1.0);
    if rng.gen_bool(0.5) {
        v
    } else {
        -v
    }
}

/// Bernoulli fill of a `rows x cols` window at `(r0, c0)`; every row gets at
/// least one entry.
fn fill_window(
    rng: &mut ChaCha8Rng,
    trip: &mut Vec<(usize, usize, f64)>,
    (r0, rows): (usize, usize),
    (c0, cols): (usize, usize),
    density: f64,
) {
    for r in r0..r0 + rows {
        let before = trip.len();
        for c in c0..c0 + cols {
            if rng.gen_bool(density) {
                trip.push((r, c, entry(rng)));
            }
        }
        if trip.len() == before && cols > 0 {
            let c = c0 + rng.gen_range(0..cols);
            trip.push((r, c, entry(rng)));
        }
    }
}

/// Plants `x̂` in `[0, u]` and turns rows into a mix of equality, `≤`, `≥`
/// and ranged constraints that `x̂` satisfies.
fn planted_lp(
    rng: &mut ChaCha8Rng,
    m: usize,
    n: usize,
    trip: &[(usize, usize, f64)],
    equality_fraction: f64,
) -> Result<LpProblem, GeneratorError> {
    let a = SparseMatrix::from_triplets(m, n, trip)?;
    let upper: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..10.0)).collect();
    let xhat: Vec<f64> = upper.iter().map(|&u| u * rng.gen_range(0.1..0.9)).collect();
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut ax = vec![0.0; m];
    crate::sparse::spmv(&a, &xhat, &mut ax);
    let mut lo = Vec::with_capacity(m);
    let mut hi = Vec::with_capacity(m);
    for &v in &ax {
        if rng.gen_bool(equality_fraction) {
            lo.push(v);
            hi.push(v);
        } else {
            match rng.gen_range(0..3) {
                0 => {
                    lo.push(f64::NEG_INFINITY);
                    hi.push(v + rng.gen_range(0.0..1.0));
                }
                1 => {
                    lo.push(v - rng.gen_range(0.0..1.0));
                    hi.push(f64::INFINITY);
                }
                _ => {
                    lo.push(v - rng.gen_range(0.0..1.0));
                    hi.push(v + rng.gen_range(0.0..1.0));
                }
            }
        }
    }
    Ok(LpProblem::new(a, c, vec![0.0; n], upper, lo, hi)?)
}

pub fn generate(spec: &GeneratorSpec) -> Result<LpProblem, GeneratorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed());
    let mut p = match *spec {
        GeneratorSpec::BlockDiagonal {
            blocks,
            block_rows,
            block_cols,
            density,
            equality_fraction,
            ..
        } => {
            check_density(density)?;
            check_fraction(equality_fraction)?;
            if blocks == 0 || block_rows == 0 || block_cols == 0 {
                return Err(GeneratorError::Invalid(
                    "block counts and sizes must be positive".into(),
                ));
            }
            let mut trip = Vec::new();
            for b in 0..blocks {
                fill_window(
                    &mut rng,
                    &mut trip,
                    (b * block_rows, block_rows),
                    (b * block_cols, block_cols),
                    density,
                );
            }
            planted_lp(
                &mut rng,
                blocks * block_rows,
                blocks * block_cols,
                &trip,
                equality_fraction,
            )?
        }
        GeneratorSpec::Staircase {
            blocks,
            block_rows,
            block_cols,
            overlap,
            density,
            equality_fraction,
            ..
        } => {
            check_density(density)?;
            check_fraction(equality_fraction)?;
            if blocks == 0 || block_rows == 0 || block_cols == 0 {
                return Err(GeneratorError::Invalid(
                    "block counts and sizes must be positive".into(),
                ));
            }
            if blocks > 1 && overlap > block_cols {
                return Err(GeneratorError::Invalid(format!(
                    "overlap {overlap} exceeds block width {block_cols}"
                )));
            }
            let n = blocks * block_cols;
            let mut trip = Vec::new();
            for b in 0..blocks {
                let c0 = b * block_cols;
                let width = (block_cols + overlap).min(n - c0);
                fill_window(
                    &mut rng,
                    &mut trip,
                    (b * block_rows, block_rows),
                    (c0, width),
                    density,
                );
            }
            planted_lp(&mut rng, blocks * block_rows, n, &trip, equality_fraction)?
        }
        GeneratorSpec::UniformRandom {
            m,
            n,
            nnz,
            equality_fraction,
            ..
        } => {
            check_fraction(equality_fraction)?;
            let cells = m.saturating_mul(n);
            if nnz > cells {
                return Err(GeneratorError::Invalid(format!(
                    "nnz {nnz} exceeds {m}x{n} = {cells} cells"
                )));
            }
            let positions = rand::seq::index::sample(&mut rng, cells, nnz);
            let mut trip: Vec<(usize, usize, f64)> =
                positions.into_iter().map(|k| (k / n, k % n, 0.0)).collect();
            for t in &mut trip {
                t.2 = entry(&mut rng);
            }
            planted_lp(&mut rng, m, n, &trip, equality_fraction)?
        }
        GeneratorSpec::BoxKnownOptimum { n, rows, .. } => {
            if n == 0 && rows > 0 {
                return Err(GeneratorError::Invalid(
                    "rows need at least one variable".into(),
                ));
            }
            let lower: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..0.0)).collect();
            let upper: Vec<f64> = lower.iter().map(|&l| l + rng.gen_range(1.0..5.0)).collect();
            let c: Vec<f64> = (0..n).map(|_| entry(&mut rng)).collect();
            let mut trip = Vec::new();
            let mut hi = Vec::with_capacity(rows);
            for r in 0..rows {
                let mut reach = 0.0;
                for j in 0..n {
                    if rng.gen_bool(0.5) {
                        let v = entry(&mut rng);
                        reach += (v * lower[j]).abs().max((v * upper[j]).abs());
                        trip.push((r, j, v));
                    }
                }
                // Strictly out of reach of any point in the box.
                hi.push(reach + 1.0);
            }
            let a = SparseMatrix::from_triplets(rows, n, &trip)?;
            LpProblem::new(a, c, lower, upper, vec![f64::NEG_INFINITY; rows], hi)?
        }
    };
    p.name = spec.name();
    Ok(p)
}

/// `min cᵀx` over the variable box alone: each `x_j` at the bound its cost
/// sign prefers. Equals the optimum of [`GeneratorSpec::BoxKnownOptimum`].
pub fn box_optimum(p: &LpProblem) -> f64 {
    let mut s = p.objective_constant;
    for j in 0..p.num_variables() {
        let c = p.objective[j];
        s += if c > 0.0 {
            c * p.var_lower[j]
        } else if c < 0.0 {
            c * p.var_upper[j]
        } else {
            0.0
        };
    }
    s
}
