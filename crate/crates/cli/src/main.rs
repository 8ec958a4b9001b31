use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hbc_core::analysis::{Classification, EndReason};
use hbc_core::harness::{
    contrast, optimize_exo, run_batch, run_trial, write_contrast_csv, AnalysisReport, BatchResult, ExperimentConfig,
    InjuryConfig,
};
use hbc_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_PLANNING: u8 = 3;

#[derive(Parser)]
#[command(name = "hbc", version, about = "Muscle-driven biped standing balance experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML); built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set planner.n=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set trial.seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for `--set trial.n_trials=N`.
    #[arg(long)]
    trials: Option<usize>,
    /// Shorthand for `--set trial.duration=T`.
    #[arg(long)]
    duration: Option<f64>,
    /// Shorthand for `--set trial.output_dir=DIR`.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self, extra: &[String]) -> anyhow::Result<ExperimentConfig> {
        let mut sets = self.overrides.clone();
        if let Some(s) = self.seed {
            sets.push(format!("trial.seed={s}"));
        }
        if let Some(n) = self.trials {
            sets.push(format!("trial.n_trials={n}"));
        }
        if let Some(d) = self.duration {
            sets.push(format!("trial.duration={d}"));
        }
        if let Some(o) = &self.out {
            sets.push(format!("trial.output_dir={}", toml_string(&o.to_string_lossy())));
        }
        sets.extend_from_slice(extra);
        let cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p, &sets).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default().with_overrides(&sets)?,
        };
        cfg.model()?;
        Ok(cfg)
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

#[derive(Subcommand)]
enum Command {
    /// Run one standing trial and write its log.
    Stand {
        #[command(flatten)]
        common: Common,
    },
    /// Run a batch of seeded standing trials.
    Batch {
        #[command(flatten)]
        common: Common,
    },
    /// Run a batch with horizontal pushes applied to the torso.
    Perturb {
        #[command(flatten)]
        common: Common,
        /// Pushes per trial (at least one).
        #[arg(long, default_value_t = 3)]
        count: usize,
        #[arg(long)]
        magnitude: Option<f64>,
    },
    /// Compare a healthy batch with one weakened muscle.
    Injury {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "rectus_femoris_l")]
        muscle: String,
        #[arg(long, default_value_t = 0.3)]
        factor: f64,
    },
    /// Search exoskeleton parameters on the perturbed task.
    ExoOptimize {
        #[command(flatten)]
        common: Common,
        /// Pushes per trial during the search and evaluation.
        #[arg(long, default_value_t = 3)]
        count: usize,
        #[arg(long)]
        budget: Option<usize>,
        /// Afterwards compare assisted and unassisted batches.
        #[arg(long)]
        evaluate: bool,
    },
    /// Summarize a directory of trial logs.
    Analyze {
        /// Directory holding `*.jsonl` logs or a `trials/` subdirectory.
        dir: PathBuf,
        /// Supplies the histogram bins and region mass.
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory; defaults to `dir`.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Parse and check a configuration, printing its hash.
    ValidateConfig {
        #[command(flatten)]
        common: Common,
        /// Also print the resolved configuration.
        #[arg(long)]
        print: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::NumericalFault { .. }) | Some(Error::NotPositiveDefinite { .. }) => EXIT_NUMERICAL,
        Some(Error::PlanningFailure(_)) => EXIT_PLANNING,
        _ => EXIT_USAGE,
    }
}

fn reason_code(reasons: impl IntoIterator<Item = EndReason>) -> u8 {
    let mut code = 0;
    for r in reasons {
        match r {
            EndReason::NumericalFault => return EXIT_NUMERICAL,
            EndReason::PlanningFailure => code = EXIT_PLANNING,
            _ => {}
        }
    }
    code
}

fn report_batch(label: &str, b: &BatchResult) {
    let s = &b.summary;
    println!(
        "{label}: {} trials, {} balanced, {} fell, {} faulted, success {:.3}, mean standing {:.3} s",
        s.n_trials, s.n_balanced, s.n_fell, s.n_fault, s.success_rate, s.mean_standing_duration
    );
}

/// Writes the batch and its analysis into `dir`.
fn persist(b: &BatchResult, cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<()> {
    b.write(dir).with_context(|| format!("writing {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    AnalysisReport::from_logs(&b.logs(), &cfg.analysis)?.write(dir)?;
    Ok(())
}

fn run(cmd: Command) -> anyhow::Result<u8> {
    match cmd {
        Command::Stand { common } => {
            let cfg = common.load(&[])?;
            let r = run_trial(&cfg, cfg.trial.seed)?;
            let dir = cfg.output_dir();
            fs::create_dir_all(&dir)?;
            let path = dir.join(format!("stand_seed{}.jsonl", cfg.trial.seed));
            r.log.write_jsonl(BufWriter::new(fs::File::create(&path)?))?;
            let o = r.outcome();
            println!(
                "seed {}: {} after {:.3} s ({}), log {}",
                cfg.trial.seed,
                o.classification.as_str(),
                o.standing_duration,
                r.log.end.reason.as_str(),
                path.display()
            );
            if !r.log.end.detail.is_empty() {
                eprintln!("{}", r.log.end.detail);
            }
            Ok(reason_code([r.log.end.reason]))
        }
        Command::Batch { common } => {
            let cfg = common.load(&[])?;
            let b = run_batch(&cfg)?;
            persist(&b, &cfg, &cfg.output_dir())?;
            report_batch("batch", &b);
            Ok(reason_code(b.trials.iter().map(|t| t.log.end.reason)))
        }
        Command::Perturb { common, count, magnitude } => {
            if count == 0 {
                anyhow::bail!("perturb needs --count of at least 1");
            }
            let mut extra = vec![format!("perturbation.count={count}")];
            if let Some(m) = magnitude {
                extra.push(format!("perturbation.magnitude={m}"));
            }
            let cfg = common.load(&extra)?;
            let b = run_batch(&cfg)?;
            persist(&b, &cfg, &cfg.output_dir())?;
            report_batch("perturbed", &b);
            Ok(reason_code(b.trials.iter().map(|t| t.log.end.reason)))
        }
        Command::Injury { common, muscle, factor } => {
            let healthy = {
                let mut c = common.load(&[])?;
                c.condition.injury = None;
                c
            };
            let mut injured = healthy.clone();
            injured.condition.injury = Some(InjuryConfig { muscle, factor });
            injured.validate()?;
            injured.model()?;
            let root = healthy.output_dir();
            let hb = run_batch(&healthy)?;
            persist(&hb, &healthy, &root.join("healthy"))?;
            let ib = run_batch(&injured)?;
            persist(&ib, &injured, &root.join("injured"))?;
            report_batch("healthy", &hb);
            report_batch("injured", &ib);
            write_contrast_csv(&contrast(&hb, &ib), fs::File::create(root.join("comparison.csv"))?)?;
            println!("per-muscle comparison in {}", root.join("comparison.csv").display());
            Ok(reason_code(hb.trials.iter().chain(&ib.trials).map(|t| t.log.end.reason)))
        }
        Command::ExoOptimize { common, count, budget, evaluate } => {
            let mut extra = vec![format!("perturbation.count={count}")];
            if let Some(b) = budget {
                extra.push(format!("exo_search.budget={b}"));
            }
            let cfg = common.load(&extra)?;
            let root = cfg.output_dir();
            let search = optimize_exo(&cfg)?;
            search.write(&cfg, &root)?;
            let p = search.best;
            println!(
                "best exo k_pe {:.3} k_de {:.3} k_pt {:.3} k_dt {:.3} w {:.3} (objective {:.4})",
                p.k_pe, p.k_de, p.k_pt, p.k_dt, p.w, search.bo.y_best
            );
            if !evaluate {
                return Ok(0);
            }
            let mut plain = cfg.clone();
            plain.condition.exo = None;
            let mut assisted = cfg.clone();
            assisted.condition.exo = Some(p);
            let ub = run_batch(&plain)?;
            persist(&ub, &plain, &root.join("unassisted"))?;
            let ab = run_batch(&assisted)?;
            persist(&ab, &assisted, &root.join("assisted"))?;
            report_batch("unassisted", &ub);
            report_batch("assisted", &ab);
            write_contrast_csv(&contrast(&ub, &ab), fs::File::create(root.join("comparison.csv"))?)?;
            Ok(reason_code(ub.trials.iter().chain(&ab.trials).map(|t| t.log.end.reason)))
        }
        Command::Analyze { dir, config, overrides, out } => {
            let cfg = match &config {
                Some(p) => ExperimentConfig::load(p, &overrides)?,
                None => ExperimentConfig::default().with_overrides(&overrides)?,
            };
            let report = AnalysisReport::from_dir(&dir, &cfg.analysis)?;
            let out = out.unwrap_or(dir);
            report.write(&out)?;
            let s = &report.summary;
            println!(
                "{} trials ({}): {} balanced, {} fell, {} faulted",
                s.n_trials, report.config_hash, s.n_balanced, s.n_fell, s.n_fault
            );
            match &report.region {
                Some(r) => println!(
                    "balance region [{:.4}, {:.4}] m, width {:.4} m, mass {:.2}",
                    r.region.lo,
                    r.region.hi,
                    r.width(),
                    r.mass
                ),
                None => println!("no balanced trials, balance region skipped"),
            }
            for (seg, n) in &report.collisions.counts {
                println!("collisions {seg}: {n}");
            }
            let fell = report.records.iter().filter(|r| r.outcome.classification == Classification::Fell).count();
            println!("falls with events: {fell}, written to {}", out.display());
            Ok(0)
        }
        Command::ValidateConfig { common, print } => {
            let cfg = common.load(&[])?;
            if print {
                print!("{}", cfg.to_toml()?);
            }
            println!("ok {}", cfg.hash()?);
            Ok(0)
        }
    }
}
