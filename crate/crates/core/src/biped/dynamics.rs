//! Rigid-body dynamics of the planar biped.
//!
//! Equations of motion are assembled in Kane form from per-segment point
//! Jacobians: `M(q) qdd + h(q, qd) = Q`, with `M = sum m J^T J + I s s^T` and
//! `h = sum m J^T (Jdot qd)`. Muscle, exoskeleton, joint-limit, contact,
//! gravity and external forces enter through `Q`.
//!
//! Integration is semi-implicit Euler. Velocity-dependent forces (contact
//! damping, friction, the muscle force-velocity slope, joint damping) are
//! linearized and taken at the end-of-step velocity, which keeps the light
//! feet stable at a 1 ms step:
//! `qd' = qd + dt (M + dt D)^-1 (Q - h)`, where `D = -dQ/dqd`.

use nalgebra::{SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};

use super::model::{ContactKind, ModelSpec, SegmentId, JOINT_OFFSET, NJ, NM, NQ};
use crate::error::{Error, Result};
use crate::muscle::{self, MuscleState};

pub type QVec = SVector<f64, NQ>;
pub type QMat = SMatrix<f64, NQ, NQ>;
type PointJac = SMatrix<f64, 2, NQ>;

/// Clockwise rotation taking the local upright frame to world.
#[inline]
fn rotate(theta: f64, r: [f64; 2]) -> Vector2<f64> {
    let (s, c) = theta.sin_cos();
    Vector2::new(r[0] * c + r[1] * s, -r[0] * s + r[1] * c)
}

/// Derivative of a rotated vector with respect to its angle.
#[inline]
fn perp(w: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(w.y, -w.x)
}

#[derive(Debug, Clone)]
pub(crate) struct SegmentFrame {
    pub theta: f64,
    pub omega: f64,
    /// Absolute pitch as a linear function of `q`.
    pub theta_row: [f64; NQ],
    pub origin: Vector2<f64>,
    pub origin_vel: Vector2<f64>,
    pub origin_jac: PointJac,
    pub origin_bias: Vector2<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct PointKin {
    pub pos: Vector2<f64>,
    pub vel: Vector2<f64>,
    pub jac: PointJac,
    pub bias: Vector2<f64>,
}

impl SegmentFrame {
    pub fn point(&self, local: [f64; 2]) -> PointKin {
        let w = rotate(self.theta, local);
        let dw = perp(&w);
        let mut jac = self.origin_jac;
        for k in 2..NQ {
            let s = self.theta_row[k];
            if s != 0.0 {
                jac[(0, k)] += s * dw.x;
                jac[(1, k)] += s * dw.y;
            }
        }
        PointKin {
            pos: self.origin + w,
            vel: self.origin_vel + self.omega * dw,
            jac,
            bias: self.origin_bias - self.omega * self.omega * w,
        }
    }

    pub fn point_position(&self, local: [f64; 2]) -> Vector2<f64> {
        self.origin + rotate(self.theta, local)
    }

    fn point_velocity(&self, local: [f64; 2]) -> Vector2<f64> {
        self.origin_vel + self.omega * perp(&rotate(self.theta, local))
    }
}

/// Forward kinematics of every segment frame.
pub(crate) fn segment_frames(spec: &ModelSpec, q: &QVec, qd: &QVec) -> [SegmentFrame; 7] {
    let mut base_jac = PointJac::zeros();
    base_jac[(0, 0)] = 1.0;
    base_jac[(1, 1)] = 1.0;
    let mut torso_row = [0.0; NQ];
    torso_row[2] = 1.0;
    let torso = SegmentFrame {
        theta: q[2],
        omega: qd[2],
        theta_row: torso_row,
        origin: Vector2::new(q[0], q[1]),
        origin_vel: Vector2::new(qd[0], qd[1]),
        origin_jac: base_jac,
        origin_bias: Vector2::zeros(),
    };
    let mut frames: [Option<SegmentFrame>; 7] = Default::default();
    frames[0] = Some(torso);
    for id in &SegmentId::ALL[1..] {
        let (parent, joint, sign) = id.link().expect("non-root segment");
        let p = frames[parent.index()].as_ref().expect("parents precede children");
        let attach = p.point(spec.segments.attach(*id));
        let qi = JOINT_OFFSET + joint;
        let mut row = p.theta_row;
        row[qi] += sign;
        frames[id.index()] = Some(SegmentFrame {
            theta: p.theta + sign * q[qi],
            omega: p.omega + sign * qd[qi],
            theta_row: row,
            origin: attach.pos,
            origin_vel: attach.vel,
            origin_jac: attach.jac,
            origin_bias: attach.bias,
        });
    }
    frames.map(|f| f.expect("all segments resolved"))
}

/// Position-only kinematics, cheaper than [`segment_frames`].
pub(crate) fn segment_poses(spec: &ModelSpec, q: &QVec) -> [(f64, Vector2<f64>); 7] {
    let mut out = [(0.0, Vector2::zeros()); 7];
    out[0] = (q[2], Vector2::new(q[0], q[1]));
    for id in &SegmentId::ALL[1..] {
        let (parent, joint, sign) = id.link().expect("non-root segment");
        let (pt, po) = out[parent.index()];
        let origin = po + rotate(pt, spec.segments.attach(*id));
        out[id.index()] = (pt + sign * q[JOINT_OFFSET + joint], origin);
    }
    out
}

/// World position of a point given in a segment's local frame.
pub fn point_world(spec: &ModelSpec, q: &QVec, segment: SegmentId, local: [f64; 2]) -> [f64; 2] {
    let (theta, origin) = segment_poses(spec, q)[segment.index()];
    let p = origin + rotate(theta, local);
    [p.x, p.y]
}

/// Per-point contact result of one dynamics step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactReport {
    pub id: usize,
    pub penetration: f64,
    pub normal: f64,
    pub tangential: f64,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub q: [f64; NQ],
    pub qd: [f64; NQ],
    pub muscles: [MuscleState; NM],
    /// Tangential spring anchors of points currently touching the ground.
    pub anchors: Vec<Option<f64>>,
    /// Contact forces produced by the most recent step.
    pub contacts: Vec<ContactReport>,
    /// Muscle tensions produced by the most recent step (N).
    pub tensions: [f64; NM],
    pub t: f64,
}

/// Normalized muscle lengths for the six joint angles.
pub fn muscle_lengths_for_joints(spec: &ModelSpec, joints: &[f64; NJ]) -> [f64; NM] {
    std::array::from_fn(|m| {
        let ms = &spec.muscles[m];
        let mut dl = 0.0;
        for j in 0..NJ {
            dl += ms.moment_arms[j] * (joints[j] - spec.neutral_pose[j]);
        }
        1.0 - dl / ms.params.l_opt
    })
}

pub fn joint_angles(q: &[f64; NQ]) -> [f64; NJ] {
    std::array::from_fn(|j| q[JOINT_OFFSET + j])
}

/// Normalized muscle lengths `l_m(q)`; exactly 1 at the neutral pose.
pub fn muscle_lengths(spec: &ModelSpec, q: &[f64; NQ]) -> [f64; NM] {
    muscle_lengths_for_joints(spec, &joint_angles(q))
}

/// Normalized fiber velocities `-(R qd) / l_opt`.
pub fn muscle_velocities(spec: &ModelSpec, _q: &[f64; NQ], qd: &[f64; NQ]) -> [f64; NM] {
    std::array::from_fn(|m| {
        let ms = &spec.muscles[m];
        let mut v = 0.0;
        for j in 0..NJ {
            v += ms.moment_arms[j] * qd[JOINT_OFFSET + j];
        }
        -v / ms.params.l_opt
    })
}

impl BodyState {
    /// A state at rest in configuration `q` with zero activation.
    pub fn at_rest(spec: &ModelSpec, q: [f64; NQ]) -> Self {
        let qd = [0.0; NQ];
        let lengths = muscle_lengths(spec, &q);
        Self {
            q,
            qd,
            muscles: std::array::from_fn(|m| MuscleState {
                act: 0.0,
                l_m: lengths[m],
                v_m: 0.0,
            }),
            anchors: vec![None; spec.contact_points.len()],
            contacts: Vec::new(),
            tensions: [0.0; NM],
            t: 0.0,
        }
    }

    /// Standing configuration with the given joint angles. The lowest foot
    /// point is placed `clearance` above the ground (negative to pre-load the
    /// contacts) with the feet centered on `x = 0`.
    pub fn standing(spec: &ModelSpec, joints: &[f64; NJ], pitch: f64, clearance: f64) -> Self {
        let mut q = [0.0; NQ];
        q[2] = pitch;
        q[JOINT_OFFSET..].copy_from_slice(joints);
        let qv = QVec::from(q);
        let poses = segment_poses(spec, &qv);
        let (mut lo_z, mut lo_x, mut hi_x) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in spec.contact_points.iter().filter(|p| p.is_foot()) {
            let (theta, origin) = poses[p.segment.index()];
            let w = origin + rotate(theta, p.local);
            lo_z = lo_z.min(w.y);
            lo_x = lo_x.min(w.x);
            hi_x = hi_x.max(w.x);
        }
        q[0] = -0.5 * (lo_x + hi_x);
        q[1] = clearance - lo_z;
        Self::at_rest(spec, q)
    }

    pub fn joints(&self) -> [f64; NJ] {
        joint_angles(&self.q)
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qd).all(|v| v.is_finite())
            && self.muscles.iter().all(|m| m.act.is_finite() && m.l_m.is_finite())
    }
}

/// Joint torques produced by muscle tensions (positive pulling). A tension
/// does positive work as its fiber shortens, so `tau_j = R[m, j] T`.
pub fn muscle_joint_torques(spec: &ModelSpec, tensions: &[f64; NM]) -> [f64; NJ] {
    let mut tau = [0.0; NJ];
    for (ms, t) in spec.muscles.iter().zip(tensions) {
        for j in 0..NJ {
            tau[j] += ms.moment_arms[j] * t;
        }
    }
    tau
}

/// Everything the step needs besides the state.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub controls: &'a [f64; NM],
    pub exo_torque: [f64; 2],
    pub external_force: f64,
    pub dt: f64,
}

/// Whole-body center of mass.
pub fn com(spec: &ModelSpec, state: &BodyState) -> [f64; 2] {
    let poses = segment_poses(spec, &QVec::from(state.q));
    let mut acc = Vector2::zeros();
    let mut mass = 0.0;
    for id in SegmentId::ALL {
        let seg = spec.segments.get(id);
        let (theta, origin) = poses[id.index()];
        acc += seg.mass * (origin + rotate(theta, seg.com));
        mass += seg.mass;
    }
    let c = acc / mass;
    [c.x, c.y]
}

pub fn com_velocity(spec: &ModelSpec, state: &BodyState) -> [f64; 2] {
    let frames = segment_frames(spec, &QVec::from(state.q), &QVec::from(state.qd));
    let mut acc = Vector2::zeros();
    let mut mass = 0.0;
    for id in SegmentId::ALL {
        let seg = spec.segments.get(id);
        acc += seg.mass * frames[id.index()].point_velocity(seg.com);
        mass += seg.mass;
    }
    let v = acc / mass;
    [v.x, v.y]
}

/// Mass-weighted center of a set of `(mass, position)` pairs.
pub fn mass_center(parts: &[(f64, [f64; 2])]) -> [f64; 2] {
    let total: f64 = parts.iter().map(|p| p.0).sum();
    let x = parts.iter().map(|p| p.0 * p.1[0]).sum::<f64>() / total;
    let z = parts.iter().map(|p| p.0 * p.1[1]).sum::<f64>() / total;
    [x, z]
}

/// Closed x-interval spanned by foot points currently below the ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

pub fn support_interval(spec: &ModelSpec, state: &BodyState) -> Option<Interval> {
    let poses = segment_poses(spec, &QVec::from(state.q));
    let mut out: Option<Interval> = None;
    for p in spec.contact_points.iter().filter(|p| p.is_foot()) {
        let (theta, origin) = poses[p.segment.index()];
        let w = origin + rotate(theta, p.local);
        if w.y < 0.0 {
            out = Some(match out {
                None => Interval { lo: w.x, hi: w.x },
                Some(i) => Interval {
                    lo: i.lo.min(w.x),
                    hi: i.hi.max(w.x),
                },
            });
        }
    }
    out
}

/// Landmarks used by the cost function.
#[derive(Debug, Clone, Copy)]
pub struct PostureMarkers {
    pub pelvis: [f64; 2],
    pub head: [f64; 2],
    /// Mean height of the heel and toe points.
    pub feet_height: f64,
    /// Midpoint of the heel/toe x-extent.
    pub feet_center: f64,
}

pub fn posture_markers(spec: &ModelSpec, q: &[f64; NQ]) -> PostureMarkers {
    let poses = segment_poses(spec, &QVec::from(*q));
    let (tt, to) = poses[0];
    let head = to + rotate(tt, [0.0, spec.segments.torso.length]);
    let (mut zsum, mut n, mut lo, mut hi) = (0.0, 0.0, f64::INFINITY, f64::NEG_INFINITY);
    for p in spec.contact_points.iter().filter(|p| p.is_foot()) {
        let (theta, origin) = poses[p.segment.index()];
        let w = origin + rotate(theta, p.local);
        zsum += w.y;
        n += 1.0;
        lo = lo.min(w.x);
        hi = hi.max(w.x);
    }
    PostureMarkers {
        pelvis: [to.x, to.y],
        head: [head.x, head.y],
        feet_height: zsum / n,
        feet_center: 0.5 * (lo + hi),
    }
}

/// Mass matrix and velocity-product bias.
pub(crate) fn mass_matrix(spec: &ModelSpec, frames: &[SegmentFrame; 7]) -> (QMat, QVec) {
    let mut m = QMat::zeros();
    let mut h = QVec::zeros();
    for id in SegmentId::ALL {
        let seg = spec.segments.get(id);
        let f = &frames[id.index()];
        let c = f.point(seg.com);
        m.gemm_tr(seg.mass, &c.jac, &c.jac, 1.0);
        let s = QVec::from(f.theta_row);
        m.ger(seg.inertia, &s, &s, 1.0);
        h.gemv_tr(seg.mass, &c.jac, &c.bias, 1.0);
    }
    (m, h)
}

/// Mechanical energy excluding contact and muscle elastic terms.
pub fn mechanical_energy(spec: &ModelSpec, state: &BodyState) -> f64 {
    let q = QVec::from(state.q);
    let qd = QVec::from(state.qd);
    let frames = segment_frames(spec, &q, &qd);
    let (m, _) = mass_matrix(spec, &frames);
    let kinetic = 0.5 * qd.dot(&(m * qd));
    let potential: f64 = SegmentId::ALL
        .iter()
        .map(|&id| {
            let seg = spec.segments.get(id);
            seg.mass * spec.gravity * frames[id.index()].point_position(seg.com).y
        })
        .sum();
    kinetic + potential
}

/// Advances `state` by one physics step in place.
pub fn step_in_place(spec: &ModelSpec, state: &mut BodyState, input: &StepInput<'_>) -> Result<()> {
    let dt = input.dt;
    let q = QVec::from(state.q);
    let qd = QVec::from(state.qd);
    let frames = segment_frames(spec, &q, &qd);
    let mut force = QVec::zeros();

    // Muscles: activation dynamics, tension, mapping through moment arms.
    let lengths = muscle_lengths(spec, &state.q);
    let velocities = muscle_velocities(spec, &state.q, &state.qd);
    let mut damping = QMat::zeros();
    for m in 0..NM {
        let ms = &spec.muscles[m];
        let st = &mut state.muscles[m];
        st.act = muscle::activation_step(st.act, input.controls[m].clamp(0.0, 1.0), dt);
        st.l_m = lengths[m];
        st.v_m = velocities[m];
        let tension = muscle::muscle_force(&ms.params, st);
        state.tensions[m] = tension;
        let slope = muscle::force_velocity_slope(st.v_m / ms.params.v_max);
        let c = ms.params.effective_f_max() * muscle::active_force_length(st.l_m) * st.act * slope
            / (ms.params.v_max * ms.params.l_opt);
        if c > 0.0 {
            for i in 0..NJ {
                let ri = ms.moment_arms[i];
                if ri == 0.0 {
                    continue;
                }
                for j in 0..NJ {
                    damping[(JOINT_OFFSET + i, JOINT_OFFSET + j)] += c * ri * ms.moment_arms[j];
                }
            }
        }
    }
    let mut joint_torque = muscle_joint_torques(spec, &state.tensions);
    joint_torque[super::model::HIP_L] += input.exo_torque[0];
    joint_torque[super::model::HIP_R] += input.exo_torque[1];
    for j in 0..NJ {
        let (a, w) = (q[JOINT_OFFSET + j], qd[JOINT_OFFSET + j]);
        let lim = spec.joint_limits[j];
        let mut tau = joint_torque[j] - spec.joint_damping * w;
        let mut c = spec.joint_damping;
        if a < lim.lo {
            tau += spec.limit_stiffness * (lim.lo - a) - spec.limit_damping * w;
            c += spec.limit_damping;
        } else if a > lim.hi {
            tau += spec.limit_stiffness * (lim.hi - a) - spec.limit_damping * w;
            c += spec.limit_damping;
        }
        force[JOINT_OFFSET + j] += tau;
        damping[(JOINT_OFFSET + j, JOINT_OFFSET + j)] += c;
    }

    // Gravity and the external push, applied at segment centers of mass.
    for id in SegmentId::ALL {
        let seg = spec.segments.get(id);
        let c = frames[id.index()].point(seg.com);
        let mut f = Vector2::new(0.0, -seg.mass * spec.gravity);
        if id == SegmentId::Torso {
            f.x += input.external_force;
        }
        force.gemv_tr(1.0, &c.jac, &f, 1.0);
    }

    // Penalty contact with anchored, smoothly saturated friction.
    let cp = spec.contact;
    state.contacts.clear();
    for (i, p) in spec.contact_points.iter().enumerate() {
        let kin = frames[p.segment.index()].point(p.local);
        let penetration = -kin.pos.y;
        if penetration <= 0.0 {
            state.anchors[i] = None;
            state.contacts.push(ContactReport {
                id: i,
                penetration,
                normal: 0.0,
                tangential: 0.0,
                x: kin.pos.x,
            });
            continue;
        }
        let spring = cp.stiffness * penetration - cp.damping * kin.vel.y;
        let normal = spring.max(0.0);
        if spring > 0.0 {
            let jz = kin.jac.row(1).transpose();
            damping.ger(cp.damping, &jz, &jz, 1.0);
        }
        let anchor = *state.anchors[i].get_or_insert(kin.pos.x);
        let trial = -cp.tangential_stiffness * (kin.pos.x - anchor) - cp.tangential_damping * kin.vel.x;
        let cap = cp.friction * normal;
        let tangential = if cap > 0.0 {
            let th = (trial / cap).tanh();
            let jx = kin.jac.row(0).transpose();
            damping.ger(cp.tangential_damping * (1.0 - th * th), &jx, &jx, 1.0);
            cap * th
        } else {
            0.0
        };
        if trial.abs() > cap {
            // Sliding: drag the anchor so the spring carries the transmitted force.
            state.anchors[i] = Some(kin.pos.x + tangential / cp.tangential_stiffness);
        }
        force.gemv_tr(1.0, &kin.jac, &Vector2::new(tangential, normal), 1.0);
        state.contacts.push(ContactReport {
            id: i,
            penetration,
            normal,
            tangential,
            x: kin.pos.x,
        });
    }

    let (mass, bias) = mass_matrix(spec, &frames);
    let chol = (mass + dt * damping).cholesky().ok_or_else(|| Error::NumericalFault {
        t: state.t,
        detail: "mass matrix is not positive definite".into(),
    })?;
    let qdd = chol.solve(&(force - bias));

    let qd_new = qd + dt * qdd;
    let q_new = q + dt * qd_new;
    state.q = q_new.into();
    state.qd = qd_new.into();
    state.t += dt;
    let lengths = muscle_lengths(spec, &state.q);
    let velocities = muscle_velocities(spec, &state.q, &state.qd);
    for m in 0..NM {
        state.muscles[m].l_m = lengths[m];
        state.muscles[m].v_m = velocities[m];
    }
    if !state.is_finite() {
        return Err(Error::NumericalFault {
            t: state.t,
            detail: format!("non-finite state, q = {:?}", state.q),
        });
    }
    Ok(())
}

/// Pure form of [`step_in_place`].
pub fn step(spec: &ModelSpec, state: &BodyState, input: &StepInput<'_>) -> Result<BodyState> {
    let mut next = state.clone();
    step_in_place(spec, &mut next, input)?;
    Ok(next)
}

/// Total ground normal force on the feet and on every other landmark.
pub fn contact_totals(spec: &ModelSpec, contacts: &[ContactReport]) -> (f64, f64) {
    let mut feet = 0.0;
    let mut other = 0.0;
    for c in contacts {
        if spec.contact_points[c.id].kind == ContactKind::Landmark {
            other += c.normal;
        } else {
            feet += c.normal;
        }
    }
    (feet, other)
}
