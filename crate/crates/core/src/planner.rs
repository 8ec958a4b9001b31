//! MPPI planning over target postures and the closed hierarchical control
//! loop.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{ContactSample, EndReason, Frame, LogEnd, LogHeader, TrialLog};
use crate::biped::{
    com, com_velocity, contact_totals, step_in_place, support_interval, BodyState, JointLimit,
    ModelSpec, StepInput, NJ, NM,
};
use crate::cost::{body_height, cost_components, CostWeights};
use crate::error::{Error, Result};
use crate::exo::{exo_torque_for_state, ExoParams};
use crate::lowctl::{pi_control, PdGains};

/// Bounds of the planned pelvis-tilt target in exo mode (rad).
pub const TILT_LIMIT: JointLimit = JointLimit { lo: -0.4, hi: 0.4 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDistribution {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl TargetDistribution {
    pub fn new(mu: Vec<f64>, sigma0: f64) -> Self {
        let sigma = vec![sigma0; mu.len()];
        Self { mu, sigma }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// One clamped draw from `N(mu, diag(sigma^2))`.
    pub fn sample(&self, rng: &mut ChaCha8Rng, limits: &[JointLimit]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .zip(limits)
            .map(|((m, s), lim)| {
                let e: f64 = rng.sample(StandardNormal);
                (m + s * e).clamp(lim.lo, lim.hi)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Execute a draw from the final distribution.
    Sample,
    /// Execute the final mean.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Mppi,
    /// Draw the target from the prior at every planning event.
    RandomTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub n: usize,
    pub h: usize,
    pub r: usize,
    pub t_e: usize,
    pub k: usize,
    pub lambda: f64,
    pub sigma_init: f64,
    pub sigma_floor: f64,
    pub target_mode: TargetMode,
    pub kind: PlannerKind,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            n: 16,
            h: 32,
            r: 2,
            t_e: 10,
            k: 4,
            lambda: 1.0,
            sigma_init: 0.15,
            sigma_floor: 0.01,
            target_mode: TargetMode::Sample,
            kind: PlannerKind::Mppi,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n >= 1
            && (1..=self.n).contains(&self.k)
            && self.h >= 1
            && self.r >= 1
            && self.t_e >= 1
            && self.lambda > 0.0
            && self.sigma_init >= 0.0
            && self.sigma_floor >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid planner settings {self:?}")))
        }
    }
}

/// Indices of the `k` cheapest finite costs, cheapest first.
pub fn select_elite(costs: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..costs.len()).filter(|&i| costs[i].is_finite()).collect();
    order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
    order.truncate(k.max(1));
    order
}

/// Elite-weighted moments of the samples. Weights are `exp(-(c - c_min)/lambda)`
/// over the `k` cheapest finite samples, ties going to the lower index.
pub fn mppi_update(samples: &[Vec<f64>], costs: &[f64], k: usize, lambda: f64) -> Result<TargetDistribution> {
    let order = select_elite(costs, k);
    if order.is_empty() {
        return Err(Error::PlanningFailure("every rollout diverged".into()));
    }
    let c_min = costs[order[0]];
    let weights: Vec<f64> = order.iter().map(|&i| (-(costs[i] - c_min) / lambda).exp()).collect();
    let total: f64 = weights.iter().sum();
    let dim = samples[order[0]].len();
    let mut mu = vec![0.0; dim];
    for (&i, w) in order.iter().zip(&weights) {
        for d in 0..dim {
            mu[d] += w * samples[i][d];
        }
    }
    mu.iter_mut().for_each(|m| *m /= total);
    let mut var = vec![0.0; dim];
    for (&i, w) in order.iter().zip(&weights) {
        for d in 0..dim {
            var[d] += w * (samples[i][d] - mu[d]).powi(2);
        }
    }
    let sigma = var.iter().map(|v| (v / total).sqrt()).collect();
    Ok(TargetDistribution { mu, sigma })
}

/// `r` rounds of sample, evaluate, update; then the executed target.
/// Costs are evaluated in parallel and gathered in sample order.
pub fn plan<F>(
    dist: &TargetDistribution,
    cfg: &PlannerConfig,
    limits: &[JointLimit],
    rng: &mut ChaCha8Rng,
    cost: F,
) -> Result<(Vec<f64>, TargetDistribution)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut dist = dist.clone();
    for _ in 0..cfg.r {
        let samples: Vec<Vec<f64>> = (0..cfg.n).map(|_| dist.sample(rng, limits)).collect();
        let costs: Vec<f64> = samples.par_iter().map(|z| cost(z)).collect();
        dist = mppi_update(&samples, &costs, cfg.k, cfg.lambda)?;
        dist.sigma.iter_mut().for_each(|s| *s = s.max(cfg.sigma_floor));
    }
    let z = match cfg.target_mode {
        TargetMode::Sample => dist.sample(rng, limits),
        TargetMode::Mean => dist.mu.clone(),
    };
    Ok((z, dist))
}

/// Everything a control step needs besides the state and target.
#[derive(Debug, Clone)]
pub struct Plant<'a> {
    pub spec: &'a ModelSpec,
    pub gains: PdGains,
    pub weights: CostWeights,
    pub exo: Option<ExoParams>,
    pub physics_dt: f64,
    pub control_dt: f64,
    /// Head-to-feet height at the start of the trial.
    pub initial_height: f64,
}

impl<'a> Plant<'a> {
    pub fn new(spec: &'a ModelSpec, s0: &BodyState) -> Self {
        Self {
            spec,
            gains: PdGains::default(),
            weights: CostWeights::default(),
            exo: None,
            physics_dt: 0.001,
            control_dt: 0.01,
            initial_height: body_height(spec, s0),
        }
    }

    pub fn substeps(&self) -> usize {
        ((self.control_dt / self.physics_dt).round() as usize).max(1)
    }

    /// Target dimension: the joints, plus pelvis tilt with the exoskeleton.
    pub fn target_dim(&self) -> usize {
        NJ + usize::from(self.exo.is_some())
    }

    pub fn target_limits(&self) -> Vec<JointLimit> {
        let mut l = self.spec.joint_limits.to_vec();
        if self.exo.is_some() {
            l.push(TILT_LIMIT);
        }
        l
    }

    /// Prior mean: the natural standing posture, upright.
    pub fn prior_mean(&self) -> Vec<f64> {
        let mut mu = self.spec.reference_pose.to_vec();
        mu.truncate(NJ);
        if self.exo.is_some() {
            mu.push(0.0);
        }
        mu
    }

    fn exo_torque(&self, state: &BodyState, z: &[f64]) -> [f64; 2] {
        match &self.exo {
            Some(p) => exo_torque_for_state(p, state, [z[0], z[3]], z.get(NJ).copied().unwrap_or(0.0)),
            None => [0.0; 2],
        }
    }

    /// One control period: `u = pi(s, z)` held over the physics substeps.
    /// `push(t)` is the external force on the torso; `observe` sees the state
    /// after every physics step.
    pub fn control_step(
        &self,
        state: &mut BodyState,
        z: &[f64],
        push: &dyn Fn(f64) -> f64,
        observe: &mut dyn FnMut(&BodyState, [f64; 2], f64),
    ) -> Result<[f64; NM]> {
        let joints: [f64; NJ] = std::array::from_fn(|j| z[j]);
        let u = pi_control(self.spec, state, &joints, &self.gains, self.control_dt).u;
        for _ in 0..self.substeps() {
            let exo_torque = self.exo_torque(state, z);
            let external_force = push(state.t);
            let input = StepInput {
                controls: &u,
                exo_torque,
                external_force,
                dt: self.physics_dt,
            };
            step_in_place(self.spec, state, &input)?;
            observe(state, exo_torque, external_force);
        }
        Ok(u)
    }

    pub fn cost(&self, state: &BodyState) -> f64 {
        cost_components(self.spec, state, &self.spec.reference_pose, self.initial_height, &self.weights).total
    }

    /// Cumulative cost of holding `z` for `h` control steps from a copy of
    /// `state`; a diverging rollout costs `+inf`.
    pub fn rollout(&self, state: &BodyState, z: &[f64], h: usize) -> f64 {
        let mut s = state.clone();
        let mut total = 0.0;
        for _ in 0..h {
            if self.control_step(&mut s, z, &|_| 0.0, &mut |_, _, _| {}).is_err() {
                return f64::INFINITY;
            }
            total += self.cost(&s);
        }
        if total.is_finite() {
            total
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub duration: f64,
    /// Physics steps between logged frames.
    pub log_every: usize,
    /// End the trial this long after the first non-foot contact.
    pub stop_after_fall: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct HbcRun {
    /// Executed controls, one per control step.
    pub controls: Vec<[f64; NM]>,
    pub log: TrialLog,
    pub planning_events: usize,
    /// Sum of the standing cost after every executed control step.
    pub cumulative_cost: f64,
}

fn frame_of(spec: &ModelSpec, s: &BodyState, exo_torque: [f64; 2], external_force: f64, target: &[f64]) -> Frame {
    Frame {
        t: s.t,
        q: s.q,
        qd: s.qd,
        com: com(spec, s),
        com_vel: com_velocity(spec, s),
        support: support_interval(spec, s),
        forces: s.tensions,
        activations: std::array::from_fn(|m| s.muscles[m].act),
        contacts: s
            .contacts
            .iter()
            .filter(|c| c.penetration > 0.0)
            .map(|c| ContactSample {
                id: c.id,
                normal: c.normal,
                tangential: c.tangential,
                x: c.x,
            })
            .collect(),
        exo_torque,
        external_force,
        target: target.to_vec(),
    }
}

/// The full hierarchical loop: replan every `t_e` control steps, execute
/// `u_t = pi(s_t, z*)` in between.
pub fn hbc_run(
    plant: &Plant<'_>,
    s0: BodyState,
    cfg: &PlannerConfig,
    opts: &RunOptions,
    rng: &mut ChaCha8Rng,
    push: &dyn Fn(f64) -> f64,
    header: LogHeader,
) -> HbcRun {
    let spec = plant.spec;
    let steps = (opts.duration / plant.control_dt).round() as usize;
    let limits = plant.target_limits();
    let prior = TargetDistribution::new(plant.prior_mean(), cfg.sigma_init);
    let mut dist = prior.clone();
    let mut z = prior.mu.clone();
    let mut state = s0;
    let mut frames = vec![frame_of(spec, &state, [0.0; 2], 0.0, &z)];
    let mut controls = Vec::with_capacity(steps);
    let mut planning_events = 0;
    let mut cumulative_cost = 0.0;
    let mut physics_steps = 0usize;
    let mut first_landmark: Option<f64> = None;
    let mut end = LogEnd::default();

    for t in 0..steps {
        if t % cfg.t_e == 0 {
            planning_events += 1;
            let planned = match cfg.kind {
                PlannerKind::Mppi => {
                    // The mean carries over between events; the spread restarts.
                    dist.sigma.iter_mut().for_each(|s| *s = cfg.sigma_init);
                    plan(&dist, cfg, &limits, rng, |zz| plant.rollout(&state, zz, cfg.h))
                }
                PlannerKind::RandomTarget => Ok((prior.sample(rng, &limits), prior.clone())),
            };
            match planned {
                Ok((next, d)) => {
                    z = next;
                    dist = d;
                }
                Err(e) => {
                    end = LogEnd {
                        t: state.t,
                        reason: EndReason::PlanningFailure,
                        detail: e.to_string(),
                        ..LogEnd::default()
                    };
                    break;
                }
            }
        }
        let stepped = plant.control_step(&mut state, &z, push, &mut |s, exo, f| {
            physics_steps += 1;
            if first_landmark.is_none() && contact_totals(spec, &s.contacts).1 > 0.0 {
                first_landmark = Some(s.t);
            }
            if physics_steps.is_multiple_of(opts.log_every) {
                frames.push(frame_of(spec, s, exo, f, &z));
            }
        });
        match stepped {
            Ok(u) => {
                controls.push(u);
                cumulative_cost += plant.cost(&state);
            }
            Err(e) => {
                end = LogEnd {
                    t: state.t,
                    reason: EndReason::NumericalFault,
                    detail: e.to_string(),
                    ..LogEnd::default()
                };
                break;
            }
        }
        if let (Some(t0), Some(wait)) = (first_landmark, opts.stop_after_fall) {
            if state.t - t0 >= wait {
                end = LogEnd {
                    t: state.t,
                    reason: EndReason::StoppedAfterFall,
                    detail: String::new(),
                    ..LogEnd::default()
                };
                break;
            }
        }
    }
    if end.reason == EndReason::Completed {
        end.t = state.t;
    }
    end.planning_events = planning_events;
    end.cumulative_cost = cumulative_cost;
    HbcRun {
        controls,
        log: TrialLog { header, frames, end },
        planning_events,
        cumulative_cost,
    }
}
