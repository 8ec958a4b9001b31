//! Hill-type muscle-tendon unit: force curves, activation dynamics and their
//! closed-form inverses.
//!
//! Lengths are normalized by the optimal fiber length and velocities are in
//! optimal lengths per second (shortening negative). Tendons are rigid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the Gaussian active force-length curve.
pub const FL_WIDTH: f64 = 0.45;
/// Strain at which the passive curve reaches one isometric force.
pub const FP_STRAIN: f64 = 0.5;
/// Activation time constant at zero activation (s).
pub const TAU_ACT: f64 = 0.010;
/// Deactivation time constant at zero activation (s).
pub const TAU_DEACT: f64 = 0.040;
/// Below this active gain the force inverse is treated as singular.
pub const GAIN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuscleParams {
    /// Maximum isometric force (N).
    pub f_max: f64,
    /// Optimal fiber length (m).
    pub l_opt: f64,
    /// Lower normalized length bound.
    pub l_min: f64,
    /// Upper normalized length bound.
    pub l_max: f64,
    /// Maximum shortening velocity (optimal lengths per second).
    pub v_max: f64,
    /// Remaining fraction of force capacity, 1 for a healthy muscle.
    #[serde(default = "one")]
    pub injury_factor: f64,
}

fn one() -> f64 {
    1.0
}

impl MuscleParams {
    pub fn new(f_max: f64, l_opt: f64) -> Self {
        Self {
            f_max,
            l_opt,
            l_min: 0.5,
            l_max: 1.6,
            v_max: 10.0,
            injury_factor: 1.0,
        }
    }

    pub fn l_range(&self) -> f64 {
        self.l_max - self.l_min
    }

    /// Force capacity after injury scaling.
    pub fn effective_f_max(&self) -> f64 {
        self.injury_factor * self.f_max
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.f_max > 0.0
            && self.l_opt > 0.0
            && self.l_min > 0.0
            && self.l_min < 1.0
            && self.l_max > 1.0
            && self.v_max > 0.0
            && (0.0..=1.0).contains(&self.injury_factor);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "muscle parameters out of range: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MuscleState {
    pub act: f64,
    pub l_m: f64,
    pub v_m: f64,
}

/// Active force-length gain, a Gaussian bump peaking at the optimal length.
pub fn active_force_length(l_m: f64) -> f64 {
    let x = (l_m - 1.0) / FL_WIDTH;
    (-x * x).exp()
}

/// Force-velocity gain for a velocity already scaled by `v_max`.
///
/// Zero at maximal shortening, one when isometric, approaching 1.4 while
/// lengthening.
pub fn force_velocity(v: f64) -> f64 {
    if v <= -1.0 {
        0.0
    } else if v <= 0.0 {
        (1.0 + v) / (1.0 - 4.0 * v)
    } else {
        (1.0 + 5.6 * v) / (1.0 + 4.0 * v)
    }
}

/// Derivative of [`force_velocity`] with respect to the scaled velocity.
pub fn force_velocity_slope(v: f64) -> f64 {
    if v <= -1.0 {
        0.0
    } else if v <= 0.0 {
        5.0 / ((1.0 - 4.0 * v) * (1.0 - 4.0 * v))
    } else {
        1.6 / ((1.0 + 4.0 * v) * (1.0 + 4.0 * v))
    }
}

/// Passive force-length fraction; slack at and below the optimal length.
pub fn passive_force(l_m: f64) -> f64 {
    let x = ((l_m - 1.0) / FP_STRAIN).max(0.0);
    x * x
}

/// Product of the active gains `F_l * F_v` for the current fiber state.
pub fn active_gain(params: &MuscleParams, l_m: f64, v_m: f64) -> f64 {
    active_force_length(l_m) * force_velocity(v_m / params.v_max)
}

/// Muscle tension (N, non-negative).
pub fn muscle_force(params: &MuscleParams, state: &MuscleState) -> f64 {
    let gain = active_gain(params, state.l_m, state.v_m);
    params.effective_f_max() * (gain * state.act + passive_force(state.l_m))
}

/// Activation-dependent time constant. Activating when `u > act`.
pub fn time_constant(u: f64, act: f64) -> f64 {
    let scale = 0.5 + 1.5 * act.clamp(0.0, 1.0);
    if u > act {
        TAU_ACT * scale
    } else {
        TAU_DEACT / scale
    }
}

/// One explicit Euler step of `d act/dt = (u - act) / tau(u, act)`.
pub fn activation_step(act: f64, u: f64, dt: f64) -> f64 {
    let tau = time_constant(u, act);
    (act + dt * (u - act) / tau).clamp(0.0, 1.0)
}

/// Result of inverting the force equation for activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationDemand {
    pub act: f64,
    /// True when the demand was clamped or the active gain was singular.
    pub saturated: bool,
}

/// Activation needed to produce tension `f_star` (N) at the given fiber state.
pub fn inverse_activation(
    params: &MuscleParams,
    l_m: f64,
    v_m: f64,
    f_star: f64,
) -> ActivationDemand {
    let gain = active_gain(params, l_m, v_m);
    let f_cap = params.effective_f_max();
    if gain <= GAIN_EPS || f_cap <= 0.0 {
        return ActivationDemand {
            act: 0.0,
            saturated: true,
        };
    }
    let raw = (f_star / f_cap - passive_force(l_m)) / gain;
    let act = raw.clamp(0.0, 1.0);
    ActivationDemand {
        act,
        saturated: act != raw,
    }
}

/// Control that moves activation from `act` to `act_star` in one step of
/// length `dt`, clamped to `[0, 1]`.
pub fn inverse_control(act: f64, act_star: f64, dt: f64) -> f64 {
    if act_star == act {
        return act;
    }
    // The branch of tau follows the requested direction: u exceeds act
    // exactly when act_star does.
    let tau = if act_star > act {
        TAU_ACT * (0.5 + 1.5 * act)
    } else {
        TAU_DEACT / (0.5 + 1.5 * act)
    };
    (act + tau * (act_star - act) / dt).clamp(0.0, 1.0)
}
