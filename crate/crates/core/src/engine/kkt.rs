//! Distributed relative KKT residuals.

use serde::{Deserialize, Serialize};

use crate::comm::{Axis, CommError, Communicator};
use crate::partition::LocalBlock;
use crate::sparse::spmv;

use super::steps::clamp;
use super::StepSizes;

/// Relative residual triple plus objectives, in the internal minimization sense.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub r_primal: f64,
    pub r_dual: f64,
    /// `+∞` while a multiplier pushes against an infinite bound.
    pub r_gap: f64,
    /// `cᵀx + const`.
    pub obj_primal: f64,
    /// `-p(-y) + sᵀx + const`; `-∞` alongside an infinite gap.
    pub obj_dual: f64,
    pub overall: f64,
}

impl KktReport {
    /// True when every residual is finite, except a flagged infinite gap.
    pub fn is_sane(&self) -> bool {
        self.r_primal.is_finite()
            && self.r_dual.is_finite()
            && (self.r_gap.is_finite() || self.r_gap == f64::INFINITY)
            && self.obj_primal.is_finite()
    }
}

/// Problem-wide constants used as normalizers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktScales {
    /// `‖c‖₂`.
    pub objective_norm: f64,
    /// `‖[ℓ_c, u_c]‖₂` over finite entries.
    pub bound_norm: f64,
}

impl KktScales {
    /// Two scalar all-reduces (`C` then `R`).
    pub fn compute(blk: &LocalBlock, comm: &dyn Communicator) -> Result<Self, CommError> {
        let c_sq = comm.allreduce_sum_scalar(Axis::C, local_objective_sq(blk))?;
        let b_sq = comm.allreduce_sum_scalar(Axis::R, local_bound_sq(blk))?;
        Ok(KktScales {
            objective_norm: c_sq.sqrt(),
            bound_norm: b_sq.sqrt(),
        })
    }
}

pub(crate) fn local_objective_sq(blk: &LocalBlock) -> f64 {
    blk.objective.iter().fold(0.0, |s, c| s + c * c)
}

pub(crate) fn local_bound_sq(blk: &LocalBlock) -> f64 {
    finite_bound_sq(&blk.con_lower, &blk.con_upper)
}

/// `Σ ℓ² + Σ u²` over finite entries.
pub fn finite_bound_sq(lower: &[f64], upper: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in lower.iter().chain(upper) {
        if v.is_finite() {
            s += v * v;
        }
    }
    s
}

/// Per-row contributions on the dual side: `[‖r_p‖², p(-y), #inf, ⟨A(x-x⁰), y-y⁰⟩, ‖y-y⁰‖²]`.
pub(crate) fn dual_side_terms(
    ax: &[f64],
    y: &[f64],
    lower: &[f64],
    upper: &[f64],
    adx0: &[f64],
    y0: &[f64],
) -> [f64; 5] {
    let (mut rp, mut p, mut inf, mut cross, mut dy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..y.len() {
        let r = ax[k] - clamp(ax[k], lower[k], upper[k]);
        rp += r * r;
        // p(-y; ℓ, u) = u·max(-y, 0) - ℓ·max(y, 0)
        let neg = (-y[k]).max(0.0);
        let pos = y[k].max(0.0);
        if neg > 0.0 {
            if upper[k].is_finite() {
                p += upper[k] * neg;
            } else {
                inf += 1.0;
            }
        }
        if pos > 0.0 {
            if lower[k].is_finite() {
                p -= lower[k] * pos;
            } else {
                inf += 1.0;
            }
        }
        let d = y[k] - y0[k];
        cross += adx0[k] * d;
        dy += d * d;
    }
    [rp, p, inf, cross, dy]
}

/// Per-column contributions on the primal side: `[‖r_d‖², cᵀx, sᵀx, ‖x-x⁰‖²]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn primal_side_terms(
    x: &[f64],
    aty: &[f64],
    c: &[f64],
    lower: &[f64],
    upper: &[f64],
    x0: &[f64],
    tau: f64,
) -> [f64; 4] {
    let (mut rd, mut cx, mut sx, mut dx) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..x.len() {
        let g = c[k] - aty[k];
        let t = x[k] - tau * g;
        let p = clamp(t, lower[k], upper[k]);
        let r = (p - x[k]) / tau;
        let s = (p - t) / tau;
        rd += r * r;
        cx += c[k] * x[k];
        sx += s * x[k];
        let d = x[k] - x0[k];
        dx += d * d;
    }
    [rd, cx, sx, dx]
}

/// Residuals from globally reduced pieces.
pub(crate) fn assemble_report(
    scales: &KktScales,
    dual: &[f64; 5],
    primal: &[f64; 4],
    objective_constant: f64,
) -> KktReport {
    let [rp_sq, p, inf, _, _] = *dual;
    let [rd_sq, cx, sx, _] = *primal;
    let r_primal = rp_sq.sqrt() / (1.0 + scales.bound_norm);
    let r_dual = rd_sq.sqrt() / (1.0 + scales.objective_norm);
    let (r_gap, dual_obj) = if inf > 0.0 {
        (f64::INFINITY, f64::NEG_INFINITY)
    } else {
        let d = -p + sx;
        ((cx + p - sx).abs() / (1.0 + cx.abs().max(d.abs())), d)
    };
    KktReport {
        r_primal,
        r_dual,
        r_gap,
        obj_primal: cx + objective_constant,
        obj_dual: dual_obj + objective_constant,
        overall: r_primal.max(r_dual).max(r_gap),
    }
}

/// KKT report plus the anchor distance that rides on the same reductions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktEvaluation {
    pub report: KktReport,
    /// `‖z - z⁰‖_P`.
    pub anchor_distance: f64,
}

/// Scratch buffers for [`evaluate_kkt`], sized to one device's slices.
#[derive(Debug, Clone)]
pub struct KktWorkspace {
    ax: Vec<f64>,
    aty: Vec<f64>,
    adx0: Vec<f64>,
    dx0: Vec<f64>,
}

impl KktWorkspace {
    pub fn new(blk: &LocalBlock) -> Self {
        KktWorkspace {
            ax: vec![0.0; blk.rows()],
            aty: vec![0.0; blk.cols()],
            adx0: vec![0.0; blk.rows()],
            dx0: vec![0.0; blk.cols()],
        }
    }
}

/// Evaluates the KKT residuals at `(x, y)` with anchor `(x0, y0)`.
///
/// Three vector all-reduces (`Ax` on `C`, `Aᵀy` on `R`, `A(x-x⁰)` on `C`) and
/// one fused scalar reduction on each of `R` and `C`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_kkt(
    blk: &LocalBlock,
    comm: &dyn Communicator,
    ss: &StepSizes,
    scales: &KktScales,
    ws: &mut KktWorkspace,
    x: &[f64],
    y: &[f64],
    x0: &[f64],
    y0: &[f64],
) -> Result<KktEvaluation, CommError> {
    spmv(&blk.matrix, x, &mut ws.ax);
    comm.allreduce_sum(Axis::C, &mut ws.ax)?;
    spmv(&blk.matrix_t, y, &mut ws.aty);
    comm.allreduce_sum(Axis::R, &mut ws.aty)?;
    for k in 0..x.len() {
        ws.dx0[k] = x[k] - x0[k];
    }
    spmv(&blk.matrix, &ws.dx0, &mut ws.adx0);
    comm.allreduce_sum(Axis::C, &mut ws.adx0)?;

    let mut dual = dual_side_terms(&ws.ax, y, &blk.con_lower, &blk.con_upper, &ws.adx0, y0);
    comm.allreduce_sum_scalars(Axis::R, &mut dual)?;
    let mut primal = primal_side_terms(
        x,
        &ws.aty,
        &blk.objective,
        &blk.var_lower,
        &blk.var_upper,
        x0,
        ss.tau(),
    );
    comm.allreduce_sum_scalars(Axis::C, &mut primal)?;

    let report = assemble_report(scales, &dual, &primal, blk.objective_constant);
    let anchor_distance = super::restart::p_norm(ss, primal[3], dual[4], dual[3]);
    Ok(KktEvaluation {
        report,
        anchor_distance,
    })
}
