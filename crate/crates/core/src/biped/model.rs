//! Static description of the planar biped: segments, joints, muscles,
//! contact geometry.
//!
//! The topology is fixed: a torso (head, arms and pelvis lumped) carrying two
//! legs of thigh, shank and foot. Generalized coordinates are
//! `[x, z, pitch, hip_l, knee_l, ankle_l, hip_r, knee_r, ankle_r]` where
//! `(x, z)` is the hip joint center, pitch is the forward lean of the torso,
//! hip and knee angles are positive in flexion and the ankle is positive in
//! dorsiflexion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::muscle::MuscleParams;

/// Number of generalized coordinates.
pub const NQ: usize = 9;
/// Number of actuated joints.
pub const NJ: usize = 6;
/// Number of muscles.
pub const NM: usize = 18;
/// Offset of the first joint angle inside `q`.
pub const JOINT_OFFSET: usize = 3;

pub const JOINT_NAMES: [&str; NJ] = ["hip_l", "knee_l", "ankle_l", "hip_r", "knee_r", "ankle_r"];
pub const HIP_L: usize = 0;
pub const HIP_R: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentId {
    Torso,
    ThighL,
    ShankL,
    FootL,
    ThighR,
    ShankR,
    FootR,
}

impl SegmentId {
    pub const ALL: [SegmentId; 7] = [
        SegmentId::Torso,
        SegmentId::ThighL,
        SegmentId::ShankL,
        SegmentId::FootL,
        SegmentId::ThighR,
        SegmentId::ShankR,
        SegmentId::FootR,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Parent segment, the joint connecting to it (index into the six joint
    /// angles) and the sign relating the joint angle to the child's absolute
    /// pitch.
    pub(crate) fn link(self) -> Option<(SegmentId, usize, f64)> {
        use SegmentId::*;
        match self {
            Torso => None,
            ThighL => Some((Torso, 0, -1.0)),
            ShankL => Some((ThighL, 1, 1.0)),
            FootL => Some((ShankL, 2, -1.0)),
            ThighR => Some((Torso, 3, -1.0)),
            ShankR => Some((ThighR, 4, 1.0)),
            FootR => Some((ShankR, 5, -1.0)),
        }
    }

    pub fn name(self) -> &'static str {
        use SegmentId::*;
        match self {
            Torso => "torso",
            ThighL => "thigh_l",
            ShankL => "shank_l",
            FootL => "foot_l",
            ThighR => "thigh_r",
            ShankR => "shank_r",
            FootR => "foot_r",
        }
    }
}

/// Inertial parameters of one rigid segment. Local frames sit at the
/// proximal joint with `+z` pointing from distal to proximal end for the
/// legs and from hip to head for the torso (the torso and the leg segments
/// are upright in the neutral pose).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    pub mass: f64,
    pub length: f64,
    /// Center of mass in the local frame (m).
    pub com: [f64; 2],
    /// Inertia about the center of mass (kg m^2).
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segments {
    pub torso: SegmentParams,
    pub thigh: SegmentParams,
    pub shank: SegmentParams,
    pub foot: SegmentParams,
}

impl Segments {
    pub fn get(&self, id: SegmentId) -> &SegmentParams {
        use SegmentId::*;
        match id {
            Torso => &self.torso,
            ThighL | ThighR => &self.thigh,
            ShankL | ShankR => &self.shank,
            FootL | FootR => &self.foot,
        }
    }

    /// Joint location of `id` in its parent's local frame.
    pub(crate) fn attach(&self, id: SegmentId) -> [f64; 2] {
        use SegmentId::*;
        match id {
            Torso | ThighL | ThighR => [0.0, 0.0],
            ShankL | ShankR => [0.0, -self.thigh.length],
            FootL | FootR => [0.0, -self.shank.length],
        }
    }

    pub fn total_mass(&self) -> f64 {
        SegmentId::ALL.iter().map(|&s| self.get(s).mass).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimit {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuscleSpec {
    pub name: String,
    #[serde(flatten)]
    pub params: MuscleParams,
    /// Signed moment arms about the six joints (m). Positive when rotating
    /// the joint in its positive direction shortens the muscle.
    pub moment_arms: [f64; NJ],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactKind {
    Heel,
    Toe,
    Landmark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    pub name: String,
    pub segment: SegmentId,
    pub local: [f64; 2],
    pub kind: ContactKind,
}

impl ContactPoint {
    pub fn is_foot(&self) -> bool {
        self.kind != ContactKind::Landmark
    }
}

/// Penalty ground contact constants, per contact point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    pub stiffness: f64,
    pub damping: f64,
    pub friction: f64,
    pub tangential_stiffness: f64,
    pub tangential_damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub gravity: f64,
    pub segments: Segments,
    pub joint_limits: [JointLimit; NJ],
    /// Stiffness of the passive joint-limit springs (N m / rad).
    pub limit_stiffness: f64,
    pub limit_damping: f64,
    /// Viscous damping at every joint (N m s / rad).
    pub joint_damping: f64,
    /// Joint angles at which every muscle sits at its optimal length.
    pub neutral_pose: [f64; NJ],
    /// Natural standing posture used for initialization and imitation cost.
    pub reference_pose: [f64; NJ],
    pub muscles: Vec<MuscleSpec>,
    pub contact: ContactParams,
    pub contact_points: Vec<ContactPoint>,
}

const LEG_MUSCLES: [(&str, f64, f64, [f64; 3]); 9] = [
    // name, f_max (N), l_opt (m), moment arms [hip, knee, ankle] (m)
    ("hip_flexor", 1500.0, 0.10, [0.05, 0.0, 0.0]),
    ("hip_extensor", 2000.0, 0.15, [-0.06, 0.0, 0.0]),
    ("knee_extensor", 5000.0, 0.09, [0.0, -0.04, 0.0]),
    ("knee_flexor", 800.0, 0.17, [0.0, 0.03, 0.0]),
    ("dorsiflexor", 1500.0, 0.10, [0.0, 0.0, 0.04]),
    ("soleus", 4000.0, 0.05, [0.0, 0.0, -0.05]),
    ("rectus_femoris", 1200.0, 0.08, [0.04, -0.04, 0.0]),
    ("gastrocnemius", 2500.0, 0.06, [0.0, 0.02, -0.05]),
    ("hamstrings", 2500.0, 0.10, [-0.07, 0.03, 0.0]),
];

impl Default for ModelSpec {
    /// 75 kg, 1.75 m adult with segment proportions from standard
    /// anthropometric tables.
    fn default() -> Self {
        let segments = Segments {
            torso: SegmentParams {
                mass: 50.85,
                length: 0.82,
                com: [0.0, 0.33],
                inertia: 2.5,
            },
            thigh: SegmentParams {
                mass: 7.5,
                length: 0.43,
                com: [0.0, -0.186],
                inertia: 0.144,
            },
            shank: SegmentParams {
                mass: 3.49,
                length: 0.43,
                com: [0.0, -0.186],
                inertia: 0.059,
            },
            foot: SegmentParams {
                mass: 1.09,
                length: 0.26,
                com: [0.05, -0.035],
                inertia: 0.01,
            },
        };
        let leg_limits = [
            JointLimit { lo: -0.5, hi: 2.0 },
            JointLimit { lo: -0.05, hi: 2.4 },
            JointLimit { lo: -0.8, hi: 0.5 },
        ];
        let mut muscles = Vec::with_capacity(NM);
        for (side, offset) in [("l", 0usize), ("r", 3usize)] {
            for (name, f_max, l_opt, arms) in LEG_MUSCLES {
                let mut moment_arms = [0.0; NJ];
                moment_arms[offset..offset + 3].copy_from_slice(&arms);
                muscles.push(MuscleSpec {
                    name: format!("{name}_{side}"),
                    params: MuscleParams::new(f_max, l_opt),
                    moment_arms,
                });
            }
        }
        let ankle_height = 0.07;
        let mut contact_points = Vec::new();
        for (side, foot, shank) in [
            ("l", SegmentId::FootL, SegmentId::ShankL),
            ("r", SegmentId::FootR, SegmentId::ShankR),
        ] {
            contact_points.push(ContactPoint {
                name: format!("heel_{side}"),
                segment: foot,
                local: [-0.06, -ankle_height],
                kind: ContactKind::Heel,
            });
            contact_points.push(ContactPoint {
                name: format!("toe_{side}"),
                segment: foot,
                local: [0.20, -ankle_height],
                kind: ContactKind::Toe,
            });
            contact_points.push(ContactPoint {
                name: format!("knee_{side}"),
                segment: shank,
                local: [0.05, 0.0],
                kind: ContactKind::Landmark,
            });
        }
        for (name, local) in [
            ("pelvis", [0.0, 0.0]),
            ("torso_mid", [0.0, 0.40]),
            ("head", [0.0, 0.82]),
        ] {
            contact_points.push(ContactPoint {
                name: name.to_string(),
                segment: SegmentId::Torso,
                local,
                kind: ContactKind::Landmark,
            });
        }
        Self {
            gravity: 9.81,
            segments,
            joint_limits: [leg_limits[0], leg_limits[1], leg_limits[2], leg_limits[0], leg_limits[1], leg_limits[2]],
            limit_stiffness: 500.0,
            limit_damping: 5.0,
            joint_damping: 1.0,
            neutral_pose: [0.0; NJ],
            reference_pose: [-0.0927, 0.0, 0.0927, -0.0927, 0.0, 0.0927],
            muscles,
            contact: ContactParams {
                stiffness: 5.0e4,
                damping: 500.0,
                friction: 0.9,
                tangential_stiffness: 5.0e4,
                tangential_damping: 500.0,
            },
            contact_points,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.gravity < 0.0 || !self.gravity.is_finite() {
            return bad(format!("gravity must be non-negative, got {}", self.gravity));
        }
        for id in SegmentId::ALL {
            let s = self.segments.get(id);
            if !(s.mass > 0.0 && s.length > 0.0 && s.inertia > 0.0) {
                return bad(format!("segment {} needs positive mass, length and inertia", id.name()));
            }
        }
        for (j, lim) in self.joint_limits.iter().enumerate() {
            if !(lim.lo < lim.hi) {
                return bad(format!("joint {} has an empty range", JOINT_NAMES[j]));
            }
            let r = self.reference_pose[j];
            if r < lim.lo || r > lim.hi {
                return bad(format!("reference pose violates the {} limit", JOINT_NAMES[j]));
            }
        }
        if self.muscles.len() != NM {
            return bad(format!("expected {NM} muscles, found {}", self.muscles.len()));
        }
        for m in &self.muscles {
            m.params.validate()?;
            let spans = m.moment_arms.iter().filter(|r| **r != 0.0).count();
            if spans == 0 || spans > 2 {
                return bad(format!("muscle {} must span one or two joints", m.name));
            }
            if m.moment_arms.iter().any(|r| r.abs() > 0.08) {
                return bad(format!("muscle {} has a moment arm beyond 0.08 m", m.name));
            }
            let left = m.moment_arms[..3].iter().any(|r| *r != 0.0);
            let right = m.moment_arms[3..].iter().any(|r| *r != 0.0);
            if left && right {
                return bad(format!("muscle {} crosses both legs", m.name));
            }
        }
        let c = &self.contact;
        if !(c.stiffness > 0.0 && c.damping >= 0.0 && c.friction >= 0.0 && c.tangential_stiffness > 0.0 && c.tangential_damping >= 0.0) {
            return bad("contact constants must be positive".into());
        }
        for side in [SegmentId::FootL, SegmentId::FootR] {
            for kind in [ContactKind::Heel, ContactKind::Toe] {
                if !self.contact_points.iter().any(|p| p.segment == side && p.kind == kind) {
                    return bad(format!("{} is missing a {kind:?} contact point", side.name()));
                }
            }
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.segments.total_mass()
    }

    pub fn muscle_index(&self, name: &str) -> Result<usize> {
        self.muscles
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| Error::UnknownMuscle(name.to_string()))
    }

    pub fn contact_index(&self, name: &str) -> Option<usize> {
        self.contact_points.iter().position(|p| p.name == name)
    }

    /// `l_range` for every muscle, used to normalize the length PD law.
    pub fn length_ranges(&self) -> [f64; NM] {
        std::array::from_fn(|m| self.muscles[m].params.l_range())
    }
}

/// Returns a copy of `spec` with the force capacity of `muscle` restricted to
/// `factor` of its healthy value.
pub fn apply_injury(spec: &ModelSpec, muscle: &str, factor: f64) -> Result<ModelSpec> {
    if !(0.0..=1.0).contains(&factor) {
        return Err(Error::InvalidConfig(format!(
            "injury factor must lie in [0, 1], got {factor}"
        )));
    }
    let idx = spec.muscle_index(muscle)?;
    let mut out = spec.clone();
    out.muscles[idx].params.injury_factor = factor;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_model_is_valid() {
        let spec = ModelSpec::default();
        spec.validate().unwrap();
        assert!((spec.total_mass() - 75.0).abs() < 0.05);
        let biarticular = ["rectus_femoris_l", "gastrocnemius_l", "hamstrings_l"];
        for m in &spec.muscles {
            let spans = m.moment_arms.iter().filter(|r| **r != 0.0).count();
            let expected = if biarticular.contains(&m.name.as_str())
                || biarticular.contains(&m.name.replace("_r", "_l").as_str())
            {
                2
            } else {
                1
            };
            assert_eq!(spans, expected, "{}", m.name);
        }
    }

    #[test]
    fn injury_touches_only_the_named_muscle() {
        let spec = ModelSpec::default();
        assert_eq!(apply_injury(&spec, "rectus_femoris_l", 1.0).unwrap(), spec);
        let hurt = apply_injury(&spec, "rectus_femoris_l", 0.3).unwrap();
        for (a, b) in spec.muscles.iter().zip(&hurt.muscles) {
            if a.name == "rectus_femoris_l" {
                assert_eq!(b.params.injury_factor, 0.3);
                assert_eq!(b.params.f_max, a.params.f_max);
            } else {
                assert_eq!(a, b);
            }
        }
        assert!(matches!(
            apply_injury(&spec, "biceps", 0.5),
            Err(Error::UnknownMuscle(_))
        ));
        assert!(apply_injury(&spec, "soleus_l", 1.2).is_err());
    }

    #[test]
    fn validation_catches_structural_errors() {
        let mut spec = ModelSpec::default();
        spec.muscles[0].moment_arms = [0.05, 0.0, 0.0, 0.05, 0.0, 0.0];
        assert!(spec.validate().is_err());
        let mut spec = ModelSpec::default();
        spec.muscles.pop();
        assert!(spec.validate().is_err());
        let mut spec = ModelSpec::default();
        spec.reference_pose[2] = 1.0;
        assert!(spec.validate().is_err());
    }
}
