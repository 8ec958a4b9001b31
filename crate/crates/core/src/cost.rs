//! Standing cost: height, upper-body rotation, CoM placement over the feet,
//! CoM velocity and imitation of a natural posture.

use serde::{Deserialize, Serialize};

use crate::biped::{com, com_velocity, posture_markers, BodyState, ModelSpec, NJ};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub height: f64,
    pub rotation: f64,
    pub com_position: f64,
    pub com_velocity: f64,
    pub imitation: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            height: 300.0,
            rotation: 300.0,
            com_position: 300.0,
            com_velocity: 10.0,
            imitation: 1.0,
        }
    }
}

impl CostWeights {
    pub fn is_valid(&self) -> bool {
        [self.height, self.rotation, self.com_position, self.com_velocity, self.imitation]
            .iter()
            .all(|w| *w >= 0.0 && w.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub height: f64,
    pub rotation: f64,
    pub com_position: f64,
    pub com_velocity: f64,
    pub imitation: f64,
    pub total: f64,
}

impl CostBreakdown {
    /// Weighted sum of already-computed components.
    pub fn from_components(c: [f64; 5], w: &CostWeights) -> Self {
        let total = w.height * c[0]
            + w.rotation * c[1]
            + w.com_position * c[2]
            + w.com_velocity * c[3]
            + w.imitation * c[4];
        Self {
            height: c[0],
            rotation: c[1],
            com_position: c[2],
            com_velocity: c[3],
            imitation: c[4],
            total,
        }
    }
}

/// Head-to-feet height of a configuration.
pub fn body_height(spec: &ModelSpec, state: &BodyState) -> f64 {
    let m = posture_markers(spec, &state.q);
    m.head[1] - m.feet_height
}

pub fn cost_components(
    spec: &ModelSpec,
    state: &BodyState,
    ref_pose: &[f64; NJ],
    initial_height: f64,
    weights: &CostWeights,
) -> CostBreakdown {
    let markers = posture_markers(spec, &state.q);
    let height = ((markers.head[1] - markers.feet_height) - initial_height).abs();
    let dx = markers.head[0] - markers.pelvis[0];
    let dz = markers.head[1] - markers.pelvis[1];
    let rotation = 1.0 - dz / (dx * dx + dz * dz).sqrt();
    let com_position = (com(spec, state)[0] - markers.feet_center).abs();
    let com_vel = com_velocity(spec, state)[0].abs();
    let joints = state.joints();
    let imitation: f64 = joints.iter().zip(ref_pose).map(|(q, r)| (q - r).abs()).sum();
    CostBreakdown::from_components([height, rotation, com_position, com_vel, imitation], weights)
}
