//! Fixed-point error, restart predicates and the PID primal-weight controller.

use serde::{Deserialize, Serialize};

use crate::comm::{Axis, CommError, Communicator};
use crate::sparse::{dot, norm_sq};

use super::StepSizes;

/// Thresholds for the three restart criteria.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RestartParams {
    pub beta_sufficient: f64,
    pub beta_necessary: f64,
    pub beta_artificial: f64,
}

impl Default for RestartParams {
    fn default() -> Self {
        RestartParams {
            beta_sufficient: 0.2,
            beta_necessary: 0.8,
            beta_artificial: 0.36,
        }
    }
}

impl RestartParams {
    pub fn validate(&self) -> Result<(), String> {
        let ok = 0.0 < self.beta_sufficient
            && self.beta_sufficient < self.beta_necessary
            && self.beta_necessary < 1.0
            && self.beta_artificial > 0.0;
        if ok {
            Ok(())
        } else {
            Err(format!(
                "restart thresholds need 0 < sufficient < necessary < 1 and artificial > 0, got {:?}",
                self
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartReason {
    Sufficient,
    Necessary,
    Artificial,
}

/// Evaluates the restart criteria in order sufficient, necessary, artificial.
///
/// `r0` is the error at the start of the epoch, `r_prev` the previous
/// measurement within it, `inner_k` the iterations taken in this epoch and
/// `total` the iterations taken overall.
pub fn restart_decision(
    params: &RestartParams,
    r0: f64,
    r_current: f64,
    r_prev: f64,
    inner_k: usize,
    total: usize,
) -> Option<RestartReason> {
    if r_current <= params.beta_sufficient * r0 {
        Some(RestartReason::Sufficient)
    } else if r_current <= params.beta_necessary * r0 && r_current > r_prev {
        Some(RestartReason::Necessary)
    } else if inner_k as f64 >= params.beta_artificial * total as f64 {
        Some(RestartReason::Artificial)
    } else {
        None
    }
}

/// PID gains and clamp range for `ω`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub omega_min: f64,
    pub omega_max: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            kp: 0.6,
            ki: 0.1,
            kd: 0.1,
            omega_min: 1e-6,
            omega_max: 1e6,
        }
    }
}

/// Controller on `e = log(ω·d_x / d_y)` driving `log ω`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PidController {
    pub gains: PidGains,
    pub integral: f64,
    pub last_error: f64,
}

impl PidController {
    pub fn new(gains: PidGains) -> Self {
        PidController {
            gains,
            integral: 0.0,
            last_error: 0.0,
        }
    }

    /// Returns the next primal weight. Degenerate distances leave `ω` and the
    /// controller state untouched.
    pub fn update(&mut self, d_x: f64, d_y: f64, omega: f64) -> f64 {
        if !(d_x > 0.0 && d_y > 0.0) || !d_x.is_finite() || !d_y.is_finite() {
            return omega;
        }
        let g = &self.gains;
        let e = (omega * d_x / d_y).ln();
        self.integral += e;
        let correction = g.kp * e + g.ki * self.integral + g.kd * (e - self.last_error);
        self.last_error = e;
        let next = (omega.ln() - correction).exp();
        next.clamp(g.omega_min, g.omega_max)
    }
}

/// `‖Δz‖²_P` from its three global pieces; negative roundoff clamps to 0.
pub fn p_norm(ss: &StepSizes, dx_sq: f64, dy_sq: f64, interaction: f64) -> f64 {
    let v = ss.omega / ss.eta * dx_sq + 1.0 / (ss.eta * ss.omega) * dy_sq + 2.0 * interaction;
    if v > 0.0 {
        v.sqrt()
    } else if v.is_nan() {
        v
    } else {
        0.0
    }
}

/// Distributed `‖Δz‖_P`.
///
/// `adx` is this device's unreduced `A[i,j] Δx[j]`. The squared norms carry
/// `1/|R|` and `1/|C|` to cancel replication. `tail` is appended to the same
/// fused global reduction and returned summed; one scalar all-reduce on `G`.
pub fn fixed_point_error_fused(
    comm: &dyn Communicator,
    ss: &StepSizes,
    dx: &[f64],
    dy: &[f64],
    adx: &[f64],
    tail: &[f64],
) -> Result<(f64, Vec<f64>), CommError> {
    let topo = comm.topology();
    let mut buf = Vec::with_capacity(3 + tail.len());
    buf.push(norm_sq(dx) / topo.rows as f64);
    buf.push(norm_sq(dy) / topo.cols as f64);
    buf.push(dot(adx, dy));
    buf.extend_from_slice(tail);
    comm.allreduce_sum_scalars(Axis::G, &mut buf)?;
    let r = p_norm(ss, buf[0], buf[1], buf[2]);
    Ok((r, buf.split_off(3)))
}

pub fn fixed_point_error(
    comm: &dyn Communicator,
    ss: &StepSizes,
    dx: &[f64],
    dy: &[f64],
    adx: &[f64],
) -> Result<f64, CommError> {
    Ok(fixed_point_error_fused(comm, ss, dx, dy, adx, &[])?.0)
}
