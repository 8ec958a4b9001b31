//! Low-level controller: target joint angles to muscle controls through a
//! normalized muscle-length PD law and inverse muscle dynamics.

use serde::{Deserialize, Serialize};

use crate::biped::{muscle_lengths_for_joints, BodyState, ModelSpec, NJ, NM};
use crate::muscle::{inverse_activation, inverse_control};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdGains {
    /// Force per unit of `l_range`-normalized length error (N).
    pub k_p: f64,
    /// Force per unit normalized fiber velocity (N s).
    pub k_d: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        Self {
            k_p: 30000.0,
            k_d: 3000.0,
        }
    }
}

/// Muscle lengths at the pose with joint angles `z`.
pub fn target_muscle_lengths(spec: &ModelSpec, z: &[f64; NJ]) -> [f64; NM] {
    muscle_lengths_for_joints(spec, z)
}

/// Desired muscle force, non-positive: `min(0, k_p (l* - l)/l_range - k_d v)`.
/// Its magnitude is the tension demand.
pub fn muscle_pd(l_star: f64, l_m: f64, v_m: f64, l_range: f64, gains: &PdGains) -> f64 {
    (gains.k_p * (l_star - l_m) / l_range + gains.k_d * (0.0 - v_m)).min(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub u: [f64; NM],
    /// Muscles whose activation demand was clamped or singular.
    pub saturated: [bool; NM],
}

impl ControlOutput {
    pub fn any_saturated(&self) -> bool {
        self.saturated.iter().any(|s| *s)
    }
}

/// `u = pi(s, z)`; `dt` is the hold time of the returned controls.
pub fn pi_control(
    spec: &ModelSpec,
    state: &BodyState,
    z: &[f64; NJ],
    gains: &PdGains,
    dt: f64,
) -> ControlOutput {
    let targets = target_muscle_lengths(spec, z);
    let mut u = [0.0; NM];
    let mut saturated = [false; NM];
    for m in 0..NM {
        let params = &spec.muscles[m].params;
        let ms = &state.muscles[m];
        let f_star = muscle_pd(targets[m], ms.l_m, ms.v_m, params.l_range(), gains);
        let demand = inverse_activation(params, ms.l_m, ms.v_m, -f_star);
        u[m] = inverse_control(ms.act, demand.act, dt);
        // A zero demand that the passive force already exceeds is not a
        // saturation of the actuator.
        saturated[m] = demand.saturated && demand.act > 0.0;
    }
    ControlOutput { u, saturated }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biped::{muscle_lengths, step, StepInput};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn pd_examples() {
        let g = PdGains { k_p: 200.0, k_d: 10.0 };
        assert_eq!(muscle_pd(1.0, 1.0, 0.0, 1.1, &g), 0.0);
        assert_eq!(muscle_pd(1.1, 1.0, 0.0, 1.1, &g), 0.0);
        let l_range = 1.1;
        assert_relative_eq!(muscle_pd(1.0, 1.0 + 0.1 * l_range, 0.0, l_range, &g), -20.0, epsilon = 1e-9);
        // Doubling the range halves the proportional term.
        let a = muscle_pd(1.0, 1.3, 0.0, 0.8, &g);
        let b = muscle_pd(1.0, 1.3, 0.0, 1.6, &g);
        assert_relative_eq!(a, 2.0 * b, epsilon = 1e-12);
    }

    #[test]
    fn target_lengths_share_geometry() {
        let spec = ModelSpec::default();
        assert!(target_muscle_lengths(&spec, &spec.neutral_pose).iter().all(|l| *l == 1.0));
        let mut q = [0.0; 9];
        let z = [0.2, 0.4, -0.1, 0.0, 0.3, 0.05];
        q[3..].copy_from_slice(&z);
        q[0] = 0.7;
        q[2] = 0.3;
        assert_eq!(target_muscle_lengths(&spec, &z), muscle_lengths(&spec, &q));
        let base = target_muscle_lengths(&spec, &spec.neutral_pose);
        let mut z = spec.neutral_pose;
        z[1] += 0.2;
        let bent = target_muscle_lengths(&spec, &z);
        for m in 0..NM {
            let spans_knee = spec.muscles[m].moment_arms[1] != 0.0;
            assert_eq!(bent[m] != base[m], spans_knee, "{}", spec.muscles[m].name);
        }
    }

    #[test]
    fn at_target_at_rest_relaxes_muscles() {
        let spec = ModelSpec::default();
        let z = spec.reference_pose;
        let mut state = BodyState::standing(&spec, &z, 0.0, 0.0);
        for m in state.muscles.iter_mut() {
            m.act = 0.3;
        }
        let out = pi_control(&spec, &state, &z, &PdGains::default(), 0.01);
        for m in 0..NM {
            let expected = inverse_control(0.3, 0.0, 0.01);
            assert_eq!(out.u[m], expected);
            assert!(out.u[m] < 0.3);
        }
    }

    #[test]
    fn one_step_reduces_overstretch() {
        let spec = ModelSpec::default();
        let z = spec.reference_pose;
        let mut bent = z;
        bent[1] = 0.5;
        bent[4] = 0.5;
        let state = BodyState::standing(&spec, &bent, 0.0, 0.2);
        let gains = PdGains::default();
        let targets = target_muscle_lengths(&spec, &z);
        let excess = |s: &BodyState| -> f64 {
            (0..NM).map(|m| (s.muscles[m].l_m - targets[m]).max(0.0).powi(2)).sum()
        };
        let mut zero_g = spec.clone();
        zero_g.gravity = 0.0;
        let before = excess(&state);
        let mut s = state.clone();
        for _ in 0..5 {
            let u = pi_control(&zero_g, &s, &z, &gains, 0.01).u;
            for _ in 0..10 {
                s = step(&zero_g, &s, &StepInput { controls: &u, exo_torque: [0.0; 2], external_force: 0.0, dt: 0.001 }).unwrap();
            }
        }
        assert!(excess(&s) < before, "{} !< {}", excess(&s), before);
    }

    proptest! {
        #[test]
        fn controls_are_bounded(
            joints in proptest::array::uniform6(-0.4f64..0.6),
            target in proptest::array::uniform6(-0.4f64..0.6),
            act in 0.0f64..1.0,
            vel in proptest::array::uniform9(-3.0f64..3.0),
        ) {
            let spec = ModelSpec::default();
            let mut state = BodyState::standing(&spec, &joints, 0.0, 0.0);
            state.qd = vel;
            let v = crate::biped::muscle_velocities(&spec, &state.q, &state.qd);
            for m in 0..NM {
                state.muscles[m].act = act;
                state.muscles[m].v_m = v[m];
            }
            let out = pi_control(&spec, &state, &target, &PdGains::default(), 0.01);
            for u in out.u {
                prop_assert!((0.0..=1.0).contains(&u));
            }
            let again = pi_control(&spec, &state, &target, &PdGains::default(), 0.01);
            prop_assert_eq!(out, again);
        }

        #[test]
        fn desired_force_never_positive(l_star in 0.5f64..1.6, l in 0.5f64..1.6, v in -5.0f64..5.0) {
            prop_assert!(muscle_pd(l_star, l, v, 1.1, &PdGains::default()) <= 0.0);
        }
    }
}
