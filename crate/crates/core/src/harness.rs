//! Experiment configuration, seeded trials and batches, persisted artifacts.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    balance_region, classify, collision_stats, BalanceRegion, Bins, Classification, CollisionStats, EndReason,
    FallRecord, LogHeader, TrialLog, TrialOutcome,
};
use crate::bayesopt::{bo_optimize, BoConfig, BoResult};
use crate::biped::{apply_injury, BodyState, ModelSpec, NM};
use crate::cost::CostWeights;
use crate::error::{Error, Result};
use crate::exo::ExoParams;
use crate::lowctl::PdGains;
use crate::planner::{hbc_run, PlannerConfig, Plant, RunOptions};
use crate::stats::rank_sum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    /// Trial length (s).
    pub duration: f64,
    pub n_trials: usize,
    /// Trial `i` of a batch uses seed `seed + i`.
    pub seed: u64,
    /// Standard deviation of the initial joint-angle perturbation (rad).
    pub joint_jitter: f64,
    /// Seconds simulated after the first non-foot contact; `inf` always
    /// runs the full duration.
    pub stop_after_fall: f64,
    /// Logged frames per second.
    pub log_rate: f64,
    pub output_dir: String,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            duration: 5.0,
            n_trials: 20,
            seed: 0,
            joint_jitter: 0.01,
            stop_after_fall: 0.5,
            log_rate: 500.0,
            output_dir: "runs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InjuryConfig {
    pub muscle: String,
    pub factor: f64,
}

impl Default for InjuryConfig {
    fn default() -> Self {
        Self {
            muscle: "rectus_femoris_l".into(),
            factor: 0.3,
        }
    }
}

/// Healthy when both parts are absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionConfig {
    pub injury: Option<InjuryConfig>,
    pub exo: Option<ExoParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub count: usize,
    /// Spacing of push onsets; push `i` starts at `interval * (i + 1)` (s).
    pub interval: f64,
    /// Horizontal force at the torso CoM (N), sign drawn per push.
    pub magnitude: f64,
    pub duration: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            count: 0,
            interval: 1.0,
            magnitude: 60.0,
            duration: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub physics_dt: f64,
    pub control_dt: f64,
    pub gains: PdGains,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            physics_dt: 0.001,
            control_dt: 0.01,
            gains: PdGains::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub bins: Bins,
    pub region_mass: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            bins: Bins {
                lo: -0.15,
                hi: 0.25,
                count: 80,
            },
            region_mass: 0.68,
        }
    }
}

/// Search box of the optimized exoskeleton vector `(k_pe, k_de, k_pt, w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExoSearchConfig {
    pub budget: usize,
    pub trials_per_eval: usize,
    /// Evaluation trials use seeds `eval_seed + j`, shared by every candidate.
    pub eval_seed: u64,
    pub seed: u64,
    pub lower: [f64; 4],
    pub upper: [f64; 4],
    pub bo: BoConfig,
}

impl Default for ExoSearchConfig {
    fn default() -> Self {
        Self {
            budget: 20,
            trials_per_eval: 5,
            eval_seed: 1_000_000,
            seed: 0,
            lower: [0.0, 0.0, 0.0, 0.0],
            upper: [400.0, 40.0, 400.0, 1.0],
            bo: BoConfig::default(),
        }
    }
}

impl ExoSearchConfig {
    pub fn params_at(&self, x: &[f64]) -> ExoParams {
        let v: [f64; 4] = std::array::from_fn(|i| self.lower[i] + x[i].clamp(0.0, 1.0) * (self.upper[i] - self.lower[i]));
        ExoParams::from_search(v[0], v[1], v[2], v[3])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Model file, relative to the working directory; the built-in model
    /// when omitted.
    pub model_file: Option<String>,
    pub trial: TrialConfig,
    pub condition: ConditionConfig,
    pub perturbation: PerturbationConfig,
    pub control: ControlConfig,
    pub cost: CostWeights,
    pub planner: PlannerConfig,
    pub analysis: AnalysisConfig,
    pub exo_search: ExoSearchConfig,
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `a.b.c=value` to a TOML tree, creating tables on the way.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{assignment}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::InvalidConfig(format!("bad override key `{path}`")));
    }
    let mut table = root;
    for k in &keys[..keys.len() - 1] {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("`{k}` in `{path}` is not a table")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table = toml::from_str(text)?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: Self = toml::Value::Table(root).try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?, overrides)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        Self::from_toml(&self.to_toml()?, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let t = &self.trial;
        if !(t.duration > 0.0) {
            return bad("trial.duration must be positive");
        }
        if t.n_trials == 0 {
            return bad("trial.n_trials must be at least 1");
        }
        if !(t.joint_jitter >= 0.0) || !(t.log_rate > 0.0) || !(t.stop_after_fall >= 0.0) {
            return bad("trial jitter, log rate and stop_after_fall must be non-negative");
        }
        let p = &self.perturbation;
        if !(p.interval > 0.0) || !(p.duration >= 0.0) || !p.magnitude.is_finite() {
            return bad("perturbation interval must be positive and duration non-negative");
        }
        let c = &self.control;
        if !(c.physics_dt > 0.0) || !(c.control_dt >= c.physics_dt) {
            return bad("control.control_dt must be at least control.physics_dt > 0");
        }
        let steps = c.control_dt / c.physics_dt;
        if (steps - steps.round()).abs() > 1e-9 {
            return bad("control.control_dt must be a multiple of control.physics_dt");
        }
        let log_every = 1.0 / (self.trial.log_rate * c.physics_dt);
        if log_every < 1.0 - 1e-9 || (log_every - log_every.round()).abs() > 1e-9 {
            return bad("trial.log_rate must divide the physics rate");
        }
        if !(c.gains.k_p >= 0.0 && c.gains.k_d >= 0.0) {
            return bad("control gains must be non-negative");
        }
        if !self.cost.is_valid() {
            return bad("cost weights must be non-negative");
        }
        self.planner.validate()?;
        if let Some(inj) = &self.condition.injury {
            if !(0.0..=1.0).contains(&inj.factor) {
                return bad("condition.injury.factor must lie in [0, 1]");
            }
        }
        if let Some(exo) = &self.condition.exo {
            if !exo.is_valid() {
                return bad("condition.exo gains must be non-negative and w in [0, 1]");
            }
        }
        let a = &self.analysis;
        if a.bins.count == 0 || !(a.bins.hi > a.bins.lo) || !(0.0..=1.0).contains(&a.region_mass) {
            return bad("analysis bins must be non-empty and region_mass in [0, 1]");
        }
        let e = &self.exo_search;
        if e.budget == 0 || e.trials_per_eval == 0 || (0..4).any(|i| !(e.upper[i] >= e.lower[i])) {
            return bad("exo_search budget and trials must be positive with lower <= upper");
        }
        e.bo.gp.validate()?;
        Ok(())
    }

    /// The model with the configured injury applied.
    pub fn model(&self) -> Result<ModelSpec> {
        let base = match &self.model_file {
            Some(p) => toml::from_str(&fs::read_to_string(p)?)?,
            None => ModelSpec::default(),
        };
        base.validate()?;
        match &self.condition.injury {
            Some(inj) => apply_injury(&base, &inj.muscle, inj.factor),
            None => Ok(base),
        }
    }

    /// SHA-256 over the canonical configuration and the resolved model.
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.to_toml()?.as_bytes());
        h.update(toml::to_string(&self.model()?)?.as_bytes());
        Ok(hex::encode(h.finalize()))
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(&self.trial.output_dir)
    }
}

/// Independent random stream `stream` of a trial.
fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const STREAM_SETUP: u64 = 1;
const STREAM_PLANNER: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Push {
    pub start: f64,
    pub end: f64,
    pub force: f64,
}

/// Push windows of a trial, signs drawn from the trial's setup stream.
pub fn push_schedule(p: &PerturbationConfig, rng: &mut ChaCha8Rng) -> Vec<Push> {
    (0..p.count)
        .map(|i| {
            let start = p.interval * (i + 1) as f64;
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            Push {
                start,
                end: start + p.duration,
                force: sign * p.magnitude,
            }
        })
        .collect()
}

fn push_force(pushes: &[Push], t: f64) -> f64 {
    pushes.iter().filter(|p| p.start <= t && t < p.end).map(|p| p.force).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub seed: u64,
    pub outcome: TrialOutcome,
    pub end_reason: EndReason,
    /// Per-muscle means over the frames before the first non-foot contact.
    pub mean_activation: Vec<f64>,
    pub mean_force: Vec<f64>,
    pub cumulative_cost: f64,
    pub planning_events: usize,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub record: TrialRecord,
    pub log: TrialLog,
}

impl TrialResult {
    pub fn outcome(&self) -> &TrialOutcome {
        &self.record.outcome
    }
}

impl TrialRecord {
    /// Everything the record holds is recoverable from the log.
    pub fn from_log(index: usize, log: &TrialLog) -> Self {
        let outcome = classify(log);
        let (mean_activation, mean_force) = standing_means(log, outcome.standing_duration);
        Self {
            index,
            seed: log.header.seed,
            end_reason: log.end.reason,
            outcome,
            mean_activation,
            mean_force,
            cumulative_cost: log.end.cumulative_cost,
            planning_events: log.end.planning_events,
        }
    }
}

fn standing_means(log: &TrialLog, until: f64) -> (Vec<f64>, Vec<f64>) {
    let frames: Vec<_> = log.frames.iter().filter(|f| f.t <= until).collect();
    let n = frames.len().max(1) as f64;
    let act = (0..NM).map(|m| frames.iter().map(|f| f.activations[m]).sum::<f64>() / n).collect();
    let force = (0..NM).map(|m| frames.iter().map(|f| f.forces[m]).sum::<f64>() / n).collect();
    (act, force)
}

/// Runs one closed-loop trial from the jittered reference posture.
pub fn run_trial(cfg: &ExperimentConfig, trial_seed: u64) -> Result<TrialResult> {
    run_trial_indexed(cfg, 0, trial_seed, &cfg.hash()?, &cfg.model()?)
}

fn run_trial_indexed(cfg: &ExperimentConfig, index: usize, seed: u64, hash: &str, spec: &ModelSpec) -> Result<TrialResult> {
    let mut setup = trial_rng(seed, STREAM_SETUP);
    let jitter = Normal::new(0.0, cfg.trial.joint_jitter).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut z0 = spec.reference_pose;
    for (j, v) in z0.iter_mut().enumerate() {
        let lim = spec.joint_limits[j];
        *v = (*v + jitter.sample(&mut setup)).clamp(lim.lo, lim.hi);
    }
    let pushes = push_schedule(&cfg.perturbation, &mut setup);

    // Start pre-loaded at the static contact depth so the feet neither drop
    // nor bounce.
    let n_feet = spec.contact_points.iter().filter(|p| p.is_foot()).count() as f64;
    let preload = spec.total_mass() * spec.gravity / (n_feet * spec.contact.stiffness);
    let s0 = BodyState::standing(spec, &z0, 0.0, -preload);

    let mut plant = Plant::new(spec, &s0);
    plant.gains = cfg.control.gains;
    plant.weights = cfg.cost;
    plant.exo = cfg.condition.exo;
    plant.physics_dt = cfg.control.physics_dt;
    plant.control_dt = cfg.control.control_dt;

    let log_every = (1.0 / (cfg.trial.log_rate * cfg.control.physics_dt)).round() as usize;
    let opts = RunOptions {
        duration: cfg.trial.duration,
        log_every,
        stop_after_fall: Some(cfg.trial.stop_after_fall).filter(|s| s.is_finite()),
    };
    let header = LogHeader::new(spec, hash, seed, log_every as f64 * cfg.control.physics_dt, cfg.trial.duration);
    let mut rng = trial_rng(seed, STREAM_PLANNER);
    let run = hbc_run(&plant, s0, &cfg.planner, &opts, &mut rng, &|t| push_force(&pushes, t), header);
    Ok(TrialResult {
        record: TrialRecord::from_log(index, &run.log),
        log: run.log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub n_trials: usize,
    pub n_balanced: usize,
    pub n_fell: usize,
    pub n_fault: usize,
    pub success_rate: f64,
    pub mean_standing_duration: f64,
    pub muscles: Vec<String>,
    pub mean_activation: Vec<f64>,
    pub mean_force: Vec<f64>,
}

impl BatchSummary {
    pub fn from_records(records: &[TrialRecord], muscles: Vec<String>) -> Self {
        let n = records.len();
        let count = |c: Classification| records.iter().filter(|r| r.outcome.classification == c).count();
        let nf = n.max(1) as f64;
        let per_muscle = |f: &dyn Fn(&TrialRecord) -> &Vec<f64>| -> Vec<f64> {
            (0..muscles.len()).map(|m| records.iter().map(|r| f(r)[m]).sum::<f64>() / nf).collect()
        };
        let n_balanced = count(Classification::Balanced);
        Self {
            n_trials: n,
            n_balanced,
            n_fell: count(Classification::Fell),
            n_fault: count(Classification::NumericalFault),
            success_rate: n_balanced as f64 / nf,
            mean_standing_duration: records.iter().map(|r| r.outcome.standing_duration).sum::<f64>() / nf,
            mean_activation: per_muscle(&|r| &r.mean_activation),
            mean_force: per_muscle(&|r| &r.mean_force),
            muscles,
        }
    }

    pub fn muscle(&self, name: &str) -> Option<usize> {
        self.muscles.iter().position(|m| m == name)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut head: Vec<String> = ["n_trials", "n_balanced", "n_fell", "n_fault", "success_rate", "mean_standing_duration"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        head.extend(self.muscles.iter().map(|m| format!("activation_{m}")));
        head.extend(self.muscles.iter().map(|m| format!("force_{m}")));
        out.write_record(&head)?;
        let mut row = vec![
            self.n_trials.to_string(),
            self.n_balanced.to_string(),
            self.n_fell.to_string(),
            self.n_fault.to_string(),
            self.success_rate.to_string(),
            self.mean_standing_duration.to_string(),
        ];
        row.extend(self.mean_activation.iter().map(|v| v.to_string()));
        row.extend(self.mean_force.iter().map(|v| v.to_string()));
        out.write_record(&row)?;
        out.flush()?;
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn write_records_csv<W: Write>(records: &[TrialRecord], muscles: &[String], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut head: Vec<String> = [
        "index",
        "seed",
        "classification",
        "end_reason",
        "standing_duration",
        "init_event_t",
        "contact_event_t",
        "fall_duration",
        "collision_segment",
        "collision_x",
        "cumulative_cost",
        "planning_events",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    head.extend(muscles.iter().map(|m| format!("activation_{m}")));
    head.extend(muscles.iter().map(|m| format!("force_{m}")));
    out.write_record(&head)?;
    for r in records {
        let rec = &r.outcome.record;
        let mut row = vec![
            r.index.to_string(),
            r.seed.to_string(),
            r.outcome.classification.as_str().to_string(),
            r.end_reason.as_str().to_string(),
            r.outcome.standing_duration.to_string(),
            opt(rec.init_event_t),
            opt(rec.contact_event_t),
            opt(rec.fall_duration),
            rec.collision_segment.clone().unwrap_or_default(),
            opt(rec.collision_x),
            r.cumulative_cost.to_string(),
            r.planning_events.to_string(),
        ];
        row.extend(r.mean_activation.iter().map(|v| v.to_string()));
        row.extend(r.mean_force.iter().map(|v| v.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub config_hash: String,
    pub trials: Vec<TrialResult>,
    pub summary: BatchSummary,
}

impl BatchResult {
    pub fn records(&self) -> Vec<TrialRecord> {
        self.trials.iter().map(|t| t.record.clone()).collect()
    }

    pub fn logs(&self) -> Vec<TrialLog> {
        self.trials.iter().map(|t| t.log.clone()).collect()
    }

    /// Writes `trials/trial_NNNN.jsonl`, `trials.csv` and `summary.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let logs = dir.join("trials");
        fs::create_dir_all(&logs)?;
        for t in &self.trials {
            let f = fs::File::create(logs.join(format!("trial_{:04}.jsonl", t.record.index)))?;
            let mut w = BufWriter::new(f);
            t.log.write_jsonl(&mut w)?;
            w.flush()?;
        }
        write_records_csv(&self.records(), &self.summary.muscles, fs::File::create(dir.join("trials.csv"))?)?;
        self.summary.write_csv(fs::File::create(dir.join("summary.csv"))?)?;
        Ok(())
    }
}

/// Trials `0..n_trials` with seeds `seed + i`, run concurrently and merged in
/// index order. A faulting trial is recorded and the batch continues.
pub fn run_batch(cfg: &ExperimentConfig) -> Result<BatchResult> {
    let seeds: Vec<u64> = (0..cfg.trial.n_trials as u64).map(|i| cfg.trial.seed + i).collect();
    run_seeds(cfg, &seeds)
}

pub fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<BatchResult> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let spec = cfg.model()?;
    let trials: Vec<TrialResult> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| run_trial_indexed(cfg, i, s, &hash, &spec))
        .collect::<Result<_>>()?;
    let records: Vec<TrialRecord> = trials.iter().map(|t| t.record.clone()).collect();
    let summary = BatchSummary::from_records(&records, spec.muscles.iter().map(|m| m.name.clone()).collect());
    Ok(BatchResult {
        config_hash: hash,
        trials,
        summary,
    })
}

#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub config_hash: String,
    pub records: Vec<TrialRecord>,
    pub summary: BatchSummary,
    /// Absent when no trial balanced.
    pub region: Option<BalanceRegion>,
    pub collisions: CollisionStats,
}

impl AnalysisReport {
    pub fn from_logs(logs: &[TrialLog], analysis: &AnalysisConfig) -> Result<Self> {
        let first = logs.first().ok_or_else(|| Error::LogMismatch("no trial logs to analyze".into()))?;
        let hash = first.header.config_hash.clone();
        if let Some(other) = logs.iter().find(|l| l.header.config_hash != hash) {
            return Err(Error::LogMismatch(format!(
                "logs mix configurations {} and {}",
                hash, other.header.config_hash
            )));
        }
        let records: Vec<TrialRecord> = logs.iter().enumerate().map(|(i, l)| TrialRecord::from_log(i, l)).collect();
        let summary = BatchSummary::from_records(&records, first.header.muscles.clone());
        let region = match balance_region(logs, analysis.bins, analysis.region_mass) {
            Ok(r) => Some(r),
            Err(Error::NoBalancedTrials) => None,
            Err(e) => return Err(e),
        };
        let falls: Vec<FallRecord> = records.iter().map(|r| r.outcome.record.clone()).collect();
        Ok(Self {
            config_hash: hash,
            collisions: collision_stats(&falls),
            records,
            summary,
            region,
        })
    }

    /// Reads every `*.jsonl` under `dir` (or `dir/trials`) in name order.
    pub fn from_dir(dir: &Path, analysis: &AnalysisConfig) -> Result<Self> {
        let trials = dir.join("trials");
        let root = if trials.is_dir() { trials } else { dir.to_path_buf() };
        let mut paths: Vec<PathBuf> = fs::read_dir(&root)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.retain(|p| p.extension().is_some_and(|e| e == "jsonl"));
        paths.sort();
        let logs = paths
            .iter()
            .map(|p| TrialLog::read_jsonl(std::io::BufReader::new(fs::File::open(p)?), None))
            .collect::<Result<Vec<_>>>()?;
        Self::from_logs(&logs, analysis)
    }

    /// Writes `analysis_trials.csv`, `analysis_summary.csv`,
    /// `balance_region.csv` and `collisions.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_records_csv(&self.records, &self.summary.muscles, fs::File::create(dir.join("analysis_trials.csv"))?)?;
        self.summary.write_csv(fs::File::create(dir.join("analysis_summary.csv"))?)?;
        if let Some(r) = &self.region {
            r.write_csv(fs::File::create(dir.join("balance_region.csv"))?)?;
        }
        self.collisions.write_csv(fs::File::create(dir.join("collisions.csv"))?)?;
        Ok(())
    }
}

/// Per-muscle contrast of two batches run under different conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuscleContrast {
    pub muscle: String,
    pub base_force: f64,
    pub treated_force: f64,
    pub base_activation: f64,
    pub treated_activation: f64,
    /// One-sided rank-sum p-values for the treated trials being larger.
    pub p_force_greater: f64,
    pub p_activation_greater: f64,
    pub p_activation_less: f64,
}

pub fn contrast(base: &BatchResult, treated: &BatchResult) -> Vec<MuscleContrast> {
    let column = |b: &BatchResult, m: usize, force: bool| -> Vec<f64> {
        b.trials
            .iter()
            .map(|t| if force { t.record.mean_force[m] } else { t.record.mean_activation[m] })
            .collect()
    };
    base.summary
        .muscles
        .iter()
        .enumerate()
        .map(|(m, name)| {
            let (bf, tf) = (column(base, m, true), column(treated, m, true));
            let (ba, ta) = (column(base, m, false), column(treated, m, false));
            MuscleContrast {
                muscle: name.clone(),
                base_force: base.summary.mean_force[m],
                treated_force: treated.summary.mean_force[m],
                base_activation: base.summary.mean_activation[m],
                treated_activation: treated.summary.mean_activation[m],
                p_force_greater: rank_sum(&tf, &bf).p_greater,
                p_activation_greater: rank_sum(&ta, &ba).p_greater,
                p_activation_less: rank_sum(&ba, &ta).p_greater,
            }
        })
        .collect()
}

pub fn write_contrast_csv<W: Write>(rows: &[MuscleContrast], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Mean cumulative standing cost per control step under `params`, negated
/// so that larger is better.
pub fn exo_objective(cfg: &ExperimentConfig, params: ExoParams) -> Result<f64> {
    let mut c = cfg.clone();
    c.condition.exo = Some(params);
    // A fall must keep paying cost until the end of the trial.
    c.trial.stop_after_fall = f64::INFINITY;
    let seeds: Vec<u64> = (0..c.exo_search.trials_per_eval as u64).map(|j| c.exo_search.eval_seed + j).collect();
    let batch = run_seeds(&c, &seeds)?;
    let steps = (c.trial.duration / c.control.control_dt).round();
    let mut total = 0.0;
    for t in &batch.trials {
        if t.record.outcome.classification == Classification::NumericalFault {
            return Err(Error::NumericalFault {
                t: t.log.end.t,
                detail: t.log.end.detail.clone(),
            });
        }
        total += t.record.cumulative_cost / steps;
    }
    Ok(-total / batch.trials.len() as f64)
}

#[derive(Debug, Clone)]
pub struct ExoSearchResult {
    pub best: ExoParams,
    pub bo: BoResult,
}

impl ExoSearchResult {
    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.bo.write_csv(fs::File::create(dir.join("bo_history.csv"))?)?;
        let mut out = csv::Writer::from_writer(fs::File::create(dir.join("bo_params.csv"))?);
        out.write_record(["iteration", "k_pe", "k_de", "k_pt", "k_dt", "w", "y"])?;
        for s in &self.bo.history {
            let p = cfg.exo_search.params_at(&s.x);
            out.write_record([
                s.iteration.to_string(),
                p.k_pe.to_string(),
                p.k_de.to_string(),
                p.k_pt.to_string(),
                p.k_dt.to_string(),
                p.w.to_string(),
                opt(s.y),
            ])?;
        }
        out.flush()?;
        let mut table = toml::Table::new();
        table.insert("exo".into(), toml::Value::try_from(self.best)?);
        fs::write(dir.join("exo_params.toml"), toml::to_string(&table)?)?;
        Ok(())
    }
}

/// Bayesian search of the exoskeleton parameters on the configured
/// (typically perturbed) standing task.
pub fn optimize_exo(cfg: &ExperimentConfig) -> Result<ExoSearchResult> {
    let e = &cfg.exo_search;
    let bo = bo_optimize(|x| exo_objective(cfg, e.params_at(x)), 4, e.budget, &e.bo, e.seed)?;
    Ok(ExoSearchResult {
        best: e.params_at(&bo.x_best),
        bo,
    })
}
