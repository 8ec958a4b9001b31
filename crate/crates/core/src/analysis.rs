//! Trial logs, fall event detection, classification, balance-region density
//! and collision statistics.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::biped::{Interval, ModelSpec, NM, NQ};
use crate::error::{Error, Result};

pub const LOG_FORMAT: &str = "hbc-trial-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogContactPoint {
    pub name: String,
    pub foot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    /// Spacing of consecutive frames (s).
    pub sample_interval: f64,
    pub duration: f64,
    pub muscles: Vec<String>,
    pub contact_points: Vec<LogContactPoint>,
}

impl LogHeader {
    pub fn new(spec: &ModelSpec, config_hash: &str, seed: u64, sample_interval: f64, duration: f64) -> Self {
        Self {
            format: LOG_FORMAT.to_string(),
            version: LOG_VERSION,
            config_hash: config_hash.to_string(),
            seed,
            sample_interval,
            duration,
            muscles: spec.muscles.iter().map(|m| m.name.clone()).collect(),
            contact_points: spec
                .contact_points
                .iter()
                .map(|p| LogContactPoint {
                    name: p.name.clone(),
                    foot: p.is_foot(),
                })
                .collect(),
        }
    }
}

/// Contact of one point that is touching the ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactSample {
    pub id: usize,
    pub normal: f64,
    pub tangential: f64,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub q: [f64; NQ],
    pub qd: [f64; NQ],
    pub com: [f64; 2],
    pub com_vel: [f64; 2],
    pub support: Option<Interval>,
    pub forces: [f64; NM],
    pub activations: [f64; NM],
    pub contacts: Vec<ContactSample>,
    pub exo_torque: [f64; 2],
    pub external_force: f64,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    #[default]
    Completed,
    /// Stopped early once the fall had played out.
    StoppedAfterFall,
    NumericalFault,
    PlanningFailure,
}

impl EndReason {
    pub fn as_str(self) -> &'static str {
        match self {
            EndReason::Completed => "completed",
            EndReason::StoppedAfterFall => "stopped_after_fall",
            EndReason::NumericalFault => "numerical_fault",
            EndReason::PlanningFailure => "planning_failure",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogEnd {
    pub t: f64,
    pub reason: EndReason,
    pub detail: String,
    pub planning_events: usize,
    /// Sum of the standing cost after every control step.
    pub cumulative_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
enum LogLine {
    Header(LogHeader),
    Frame(Frame),
    End(LogEnd),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub header: LogHeader,
    pub frames: Vec<Frame>,
    pub end: LogEnd,
}

impl TrialLog {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &LogLineRef::Header(&self.header))?;
        w.write_all(b"\n")?;
        for f in &self.frames {
            serde_json::to_writer(&mut w, &LogLineRef::Frame(f))?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut w, &LogLineRef::End(&self.end))?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    /// Parses a log, refusing other formats, versions and, when given, a
    /// different configuration hash.
    pub fn read_jsonl<R: BufRead>(r: R, expected_hash: Option<&str>) -> Result<Self> {
        let mut header = None;
        let mut frames = Vec::new();
        let mut end = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LogLine>(&line)? {
                LogLine::Header(h) => {
                    if i != 0 {
                        return Err(Error::LogMismatch("header is not the first line".into()));
                    }
                    if h.format != LOG_FORMAT || h.version != LOG_VERSION {
                        return Err(Error::LogMismatch(format!(
                            "unsupported log {} v{}, expected {LOG_FORMAT} v{LOG_VERSION}",
                            h.format, h.version
                        )));
                    }
                    if let Some(expected) = expected_hash {
                        if h.config_hash != expected {
                            return Err(Error::LogMismatch(format!(
                                "config hash {} does not match {expected}",
                                h.config_hash
                            )));
                        }
                    }
                    header = Some(h);
                }
                LogLine::Frame(f) if header.is_some() && end.is_none() => frames.push(f),
                LogLine::End(e) if header.is_some() && end.is_none() => end = Some(e),
                _ => return Err(Error::LogMismatch(format!("unexpected line {}", i + 1))),
            }
        }
        let header = header.ok_or_else(|| Error::LogMismatch("missing header".into()))?;
        let end = end.ok_or_else(|| Error::LogMismatch("truncated log".into()))?;
        Ok(Self { header, frames, end })
    }

    /// Summed normal force of non-foot landmarks in a frame.
    pub fn landmark_force(&self, frame: &Frame) -> f64 {
        frame
            .contacts
            .iter()
            .filter(|c| !self.header.contact_points[c.id].foot)
            .map(|c| c.normal)
            .sum()
    }
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLineRef<'a> {
    Header(&'a LogHeader),
    Frame(&'a Frame),
    End(&'a LogEnd),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FallRecord {
    pub init_event_t: Option<f64>,
    pub contact_event_t: Option<f64>,
    pub fall_duration: Option<f64>,
    pub collision_segment: Option<String>,
    pub collision_x: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Balanced,
    Fell,
    NumericalFault,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Balanced => "balanced",
            Self::Fell => "fell",
            Self::NumericalFault => "numerical_fault",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub classification: Classification,
    pub record: FallRecord,
    /// Time on the feet: first non-foot ground contact, else the end of the log.
    pub standing_duration: f64,
}

pub fn point_in_support(x_com: f64, interval: Option<Interval>) -> bool {
    interval.is_some_and(|i| i.contains(x_com))
}

pub fn detect_events(log: &TrialLog) -> FallRecord {
    let frames = &log.frames;
    let inside: Vec<bool> = frames.iter().map(|f| point_in_support(f.com[0], f.support)).collect();
    let init = (1..frames.len()).find(|&i| inside[i - 1] && !inside[i]);

    let mut best: Option<(usize, f64)> = None;
    for (i, f) in frames.iter().enumerate().skip(init.unwrap_or(0)) {
        let force = log.landmark_force(f);
        // Strict comparison keeps the earliest of equal peaks.
        if force > 0.0 && best.is_none_or(|(_, b)| force > b) {
            best = Some((i, force));
        }
    }

    let mut record = FallRecord {
        init_event_t: init.map(|i| frames[i].t),
        ..FallRecord::default()
    };
    if let Some((i, _)) = best {
        let f = &frames[i];
        record.contact_event_t = Some(f.t);
        let hit = f
            .contacts
            .iter()
            .filter(|c| !log.header.contact_points[c.id].foot)
            .fold(None::<&ContactSample>, |acc, c| match acc {
                Some(a) if a.normal >= c.normal => Some(a),
                _ => Some(c),
            })
            .expect("a positive landmark force has a contact");
        record.collision_segment = Some(log.header.contact_points[hit.id].name.clone());
        record.collision_x = Some(hit.x);
        record.fall_duration = record.init_event_t.map(|t0| f.t - t0);
    }
    record
}

pub fn standing_duration(log: &TrialLog) -> f64 {
    log.frames
        .iter()
        .find(|f| log.landmark_force(f) > 0.0)
        .or(log.frames.last())
        .map_or(0.0, |f| f.t)
}

pub fn classify(log: &TrialLog) -> TrialOutcome {
    let record = detect_events(log);
    let standing = standing_duration(log);
    let classification = match log.end.reason {
        EndReason::NumericalFault | EndReason::PlanningFailure => Classification::NumericalFault,
        EndReason::StoppedAfterFall => Classification::Fell,
        EndReason::Completed => {
            let touched = log.frames.iter().any(|f| log.landmark_force(f) > 0.0);
            let upright_at_end = log
                .frames
                .last()
                .is_some_and(|f| point_in_support(f.com[0], f.support));
            if !touched && upright_at_end {
                Classification::Balanced
            } else {
                Classification::Fell
            }
        }
    };
    TrialOutcome {
        classification,
        record,
        standing_duration: standing,
    }
}

/// Uniform histogram bins over `[lo, hi]`; samples outside fall in the edge bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bins {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Bins {
    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.count as f64
    }

    pub fn index(&self, x: f64) -> usize {
        let i = ((x - self.lo) / self.width()).floor();
        (i.max(0.0) as usize).min(self.count - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRegion {
    pub bins: Bins,
    /// Probability mass per bin, summing to one.
    pub density: Vec<f64>,
    /// Smallest run of bins holding at least `mass` of the density.
    pub region: Interval,
    pub mass: f64,
}

impl BalanceRegion {
    pub fn width(&self) -> f64 {
        self.region.width()
    }

    /// One row per bin, flagging the bins inside the region.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_lo", "bin_hi", "density", "in_region"])?;
        let bw = self.bins.width();
        for (i, d) in self.density.iter().enumerate() {
            let lo = self.bins.lo + i as f64 * bw;
            let mid = lo + 0.5 * bw;
            let inside = mid >= self.region.lo && mid <= self.region.hi;
            out.write_record([lo.to_string(), (lo + bw).to_string(), d.to_string(), inside.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Histogram of CoM x over every frame of the balanced trials.
pub fn balance_region(trials: &[TrialLog], bins: Bins, mass: f64) -> Result<BalanceRegion> {
    if bins.count == 0 || bins.hi <= bins.lo || !(0.0..=1.0).contains(&mass) {
        return Err(Error::InvalidConfig("balance-region bins must be non-empty".into()));
    }
    let mut counts = vec![0u64; bins.count];
    let mut total = 0u64;
    for log in trials {
        if classify(log).classification != Classification::Balanced {
            continue;
        }
        for f in &log.frames {
            counts[bins.index(f.com[0])] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::NoBalancedTrials);
    }
    let density: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let need = (mass * total as f64).ceil() as u64;
    let mut best = (0, bins.count - 1);
    for lo in 0..bins.count {
        let mut acc = 0;
        for hi in lo..bins.count {
            acc += counts[hi];
            if acc >= need {
                if hi - lo < best.1 - best.0 {
                    best = (lo, hi);
                }
                break;
            }
        }
    }
    let w = bins.width();
    Ok(BalanceRegion {
        bins,
        density,
        region: Interval {
            lo: bins.lo + best.0 as f64 * w,
            hi: bins.lo + (best.1 + 1) as f64 * w,
        },
        mass,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollisionStats {
    pub counts: BTreeMap<String, usize>,
    pub positions: BTreeMap<String, Vec<f64>>,
}

impl CollisionStats {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["segment", "count", "mean_x"])?;
        for (seg, n) in &self.counts {
            let xs = self.positions.get(seg).map(Vec::as_slice).unwrap_or_default();
            let mean = if xs.is_empty() { f64::NAN } else { xs.iter().sum::<f64>() / xs.len() as f64 };
            out.write_record([seg.clone(), n.to_string(), mean.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn collision_stats(records: &[FallRecord]) -> CollisionStats {
    let mut out = CollisionStats::default();
    for r in records {
        if let Some(seg) = &r.collision_segment {
            *out.counts.entry(seg.clone()).or_default() += 1;
            if let Some(x) = r.collision_x {
                out.positions.entry(seg.clone()).or_default().push(x);
            }
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn header() -> LogHeader {
        LogHeader::new(&ModelSpec::default(), "00ff", 7, 0.002, 2.0)
    }

    /// A standing frame at sample `i` with CoM `x` over a fixed support.
    pub fn frame(i: usize, x: f64) -> Frame {
        Frame {
            t: i as f64 * 0.002,
            q: [0.0; NQ],
            qd: [0.0; NQ],
            com: [x, 0.9],
            com_vel: [0.0; 2],
            support: Some(Interval { lo: -0.1, hi: 0.16 }),
            forces: [0.0; NM],
            activations: [0.0; NM],
            contacts: vec![ContactSample {
                id: 0,
                normal: 700.0,
                tangential: 1.0,
                x: -0.1,
            }],
            exo_torque: [0.0; 2],
            external_force: 0.0,
            target: vec![0.0; 6],
        }
    }

    pub fn log(frames: Vec<Frame>) -> TrialLog {
        let t = frames.last().map_or(0.0, |f| f.t);
        TrialLog {
            header: header(),
            frames,
            end: LogEnd {
                t,
                reason: EndReason::Completed,
                detail: String::new(),
                planning_events: 0,
                cumulative_cost: 0.0,
            },
        }
    }
}
