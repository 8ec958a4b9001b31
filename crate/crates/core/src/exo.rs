//! Hip exoskeleton torque law: a weighted mixture of hip-angle PD and
//! pelvis-tilt PD.

use serde::{Deserialize, Serialize};

use crate::biped::{BodyState, HIP_L, HIP_R, JOINT_OFFSET};

/// Torque saturation of each hip actuator (N m).
pub const TAU_MAX: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExoParams {
    pub k_pe: f64,
    pub k_de: f64,
    pub k_pt: f64,
    pub k_dt: f64,
    pub w: f64,
}

impl Default for ExoParams {
    fn default() -> Self {
        Self::from_search(100.0, 10.0, 100.0, 0.5)
    }
}

impl ExoParams {
    /// Parameters from the optimized vector `(k_pe, k_de, k_pt, w)`; the
    /// postural damping follows the postural stiffness.
    pub fn from_search(k_pe: f64, k_de: f64, k_pt: f64, w: f64) -> Self {
        Self {
            k_pe,
            k_de,
            k_pt,
            k_dt: 0.1 * k_pt,
            w,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.k_pe >= 0.0
            && self.k_de >= 0.0
            && self.k_pt >= 0.0
            && self.k_dt >= 0.0
            && (0.0..=1.0).contains(&self.w)
    }
}

/// Per-side hip torques, positive in flexion.
#[allow(clippy::too_many_arguments)]
pub fn exo_torque(
    params: &ExoParams,
    q_hip: [f64; 2],
    qd_hip: [f64; 2],
    q_tilt: f64,
    qd_tilt: f64,
    q_star: [f64; 2],
    q_tilt_star: f64,
) -> [f64; 2] {
    let postural = params.k_pt * (q_tilt_star - q_tilt) + params.k_dt * (0.0 - qd_tilt);
    std::array::from_fn(|i| {
        let joint = params.k_pe * (q_star[i] - q_hip[i]) + params.k_de * (0.0 - qd_hip[i]);
        ((1.0 - params.w) * joint + params.w * postural).clamp(-TAU_MAX, TAU_MAX)
    })
}

/// [`exo_torque`] evaluated on a body state.
pub fn exo_torque_for_state(
    params: &ExoParams,
    state: &BodyState,
    q_star: [f64; 2],
    q_tilt_star: f64,
) -> [f64; 2] {
    let (l, r) = (JOINT_OFFSET + HIP_L, JOINT_OFFSET + HIP_R);
    // With the feet planted, hip flexion torque pitches the pelvis forward,
    // so the postural term on the forward-lean coordinate has the PD sign.
    exo_torque(
        params,
        [state.q[l], state.q[r]],
        [state.qd[l], state.qd[r]],
        state.q[2],
        state.qd[2],
        q_star,
        q_tilt_star,
    )
}
