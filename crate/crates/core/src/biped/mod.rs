//! Reduced sagittal-plane musculoskeletal biped.

mod dynamics;
mod model;

pub use dynamics::{
    com, com_velocity, contact_totals, joint_angles, mass_center, mechanical_energy,
    muscle_lengths, muscle_joint_torques, muscle_lengths_for_joints, muscle_velocities, point_world, posture_markers,
    step, step_in_place, support_interval, BodyState, ContactReport, Interval, PostureMarkers,
    QVec, StepInput,
};
pub use model::{
    apply_injury, ContactKind, ContactParams, ContactPoint, JointLimit, ModelSpec, MuscleSpec,
    SegmentId, SegmentParams, Segments, HIP_L, HIP_R, JOINT_NAMES, JOINT_OFFSET, NJ, NM, NQ,
};
