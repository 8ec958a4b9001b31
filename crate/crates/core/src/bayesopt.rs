//! Gaussian-process Bayesian optimization with Expected Improvement.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    /// Per-dimension lengthscales; a single value applies to every dimension.
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub jitter: f64,
    pub max_jitter: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            lengthscales: vec![0.2],
            signal_variance: 1.0,
            noise_variance: 0.01,
            jitter: 1e-8,
            max_jitter: 1e-4,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = !self.lengthscales.is_empty()
            && self.lengthscales.iter().all(|l| *l > 0.0)
            && self.signal_variance > 0.0
            && self.noise_variance > 0.0
            && self.jitter > 0.0
            && self.max_jitter >= self.jitter;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid GP settings {self:?}")))
        }
    }

    fn lengthscale(&self, d: usize) -> f64 {
        *self.lengthscales.get(d).unwrap_or(&self.lengthscales[self.lengthscales.len() - 1])
    }

    /// Squared-exponential kernel.
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .enumerate()
            .map(|(d, (x, y))| ((x - y) / self.lengthscale(d)).powi(2))
            .sum();
        self.signal_variance * (-0.5 * r2).exp()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GpDataset {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl GpDataset {
    pub fn push(&mut self, x: Vec<f64>, y: f64) {
        self.points.push(x);
        self.values.push(y);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values shifted and scaled to zero mean and unit variance.
    pub fn standardized(&self) -> GpDataset {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n.max(1.0);
        let var = self.values.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n.max(1.0);
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        GpDataset {
            points: self.points.clone(),
            values: self.values.iter().map(|y| (y - mean) / sd).collect(),
        }
    }
}

/// A fitted posterior: factor of `K + (noise + jitter) I` and its weights.
/// `jitter` is zero unless the plain system failed to factor.
#[derive(Debug, Clone)]
pub struct GpModel<'a> {
    cfg: &'a GpConfig,
    points: &'a [Vec<f64>],
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    pub jitter: f64,
}

impl<'a> GpModel<'a> {
    pub fn fit(data: &'a GpDataset, cfg: &'a GpConfig) -> Result<Self> {
        let n = data.len();
        if n == 0 {
            return Ok(Self {
                cfg,
                points: &data.points,
                chol: None,
                alpha: DVector::zeros(0),
                jitter: 0.0,
            });
        }
        let gram = DMatrix::from_fn(n, n, |i, j| cfg.kernel(&data.points[i], &data.points[j]));
        let y = DVector::from_column_slice(&data.values);
        // The exact system is tried first; jitter is a fallback.
        let mut jitter = 0.0;
        loop {
            let mut a = gram.clone();
            for i in 0..n {
                a[(i, i)] += cfg.noise_variance + jitter;
            }
            if let Some(chol) = a.clone().cholesky() {
                let alpha = chol.solve(&y);
                return Ok(Self {
                    cfg,
                    points: &data.points,
                    chol: Some(chol),
                    alpha,
                    jitter,
                });
            }
            if jitter * 10.0 > cfg.max_jitter * (1.0 + 1e-12) {
                let min_diag = (0..n).map(|i| a[(i, i)]).fold(f64::INFINITY, f64::min);
                return Err(Error::NotPositiveDefinite { jitter, n, min_diag });
            }
            jitter = if jitter == 0.0 { cfg.jitter } else { jitter * 10.0 };
        }
    }

    /// Predictive mean and standard deviation of the latent function.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let prior = self.cfg.kernel(x, x);
        let Some(chol) = &self.chol else {
            return (0.0, prior.sqrt());
        };
        let k = DVector::from_iterator(self.points.len(), self.points.iter().map(|p| self.cfg.kernel(p, x)));
        let mean = k.dot(&self.alpha);
        let v = chol.l().solve_lower_triangular(&k).expect("a Cholesky factor is invertible");
        let var = (prior - v.dot(&v)).max(0.0);
        (mean, var.sqrt())
    }
}

pub fn gp_posterior(data: &GpDataset, cfg: &GpConfig, x: &[f64]) -> Result<(f64, f64)> {
    Ok(GpModel::fit(data, cfg)?.predict(x))
}

/// `E[max(f - f_best, 0)]` for `f ~ N(mean, std^2)`.
pub fn expected_improvement(mean: f64, std: f64, f_best: f64) -> f64 {
    let gap = mean - f_best;
    if std <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / std;
    let n = Normal::standard();
    (gap * n.cdf(z) + std * n.pdf(z)).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    /// Random candidates screened for start points.
    pub screen: usize,
    pub starts: usize,
    pub refine_steps: usize,
    /// Initial pattern-search step in unit-box coordinates.
    pub initial_step: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            screen: 1024,
            starts: 64,
            refine_steps: 100,
            initial_step: 0.1,
        }
    }
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen::<f64>()).collect()
}

/// Coordinate pattern search on `f` inside the unit box.
fn refine(f: &dyn Fn(&[f64]) -> f64, start: Vec<f64>, step0: f64, steps: usize) -> (Vec<f64>, f64) {
    let mut x = start;
    let mut fx = f(&x);
    let mut step = step0;
    for _ in 0..steps {
        let mut improved = false;
        for d in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[d] = (y[d] + dir * step).clamp(0.0, 1.0);
                let fy = f(&y);
                if fy > fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

/// Maximizer of EI over `[0, 1]^dim` by multi-start pattern search.
pub fn acquire_next(
    data: &GpDataset,
    cfg: &GpConfig,
    acq: &AcquisitionConfig,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Ok(random_point(rng, dim));
    }
    let std_data = data.standardized();
    let model = GpModel::fit(&std_data, cfg)?;
    let f_best = std_data.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ei = |x: &[f64]| {
        let (m, s) = model.predict(x);
        expected_improvement(m, s, f_best)
    };
    let mut screened: Vec<(f64, Vec<f64>)> = (0..acq.screen.max(acq.starts))
        .map(|_| {
            let x = random_point(rng, dim);
            (ei(&x), x)
        })
        .collect();
    // Stable sort keeps the draw order among equal scores.
    screened.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best: Option<(Vec<f64>, f64)> = None;
    for (_, start) in screened.into_iter().take(acq.starts.max(1)) {
        let (x, fx) = refine(&ei, start, acq.initial_step, acq.refine_steps);
        if best.as_ref().is_none_or(|(_, b)| fx > *b) {
            best = Some((x, fx));
        }
    }
    Ok(best.expect("at least one start").0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoConfig {
    pub gp: GpConfig,
    pub acquisition: AcquisitionConfig,
    /// Uniformly random evaluations before the acquisition takes over.
    pub n_init: usize,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            gp: GpConfig::default(),
            acquisition: AcquisitionConfig::default(),
            n_init: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoStep {
    pub iteration: usize,
    pub x: Vec<f64>,
    /// Observed objective; `None` when the evaluation failed.
    pub y: Option<f64>,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoResult {
    pub x_best: Vec<f64>,
    pub y_best: f64,
    pub history: Vec<BoStep>,
}

impl BoResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let dim = self.x_best.len();
        let mut out = csv::Writer::from_writer(w);
        let mut head = vec!["iteration".to_string()];
        head.extend((0..dim).map(|d| format!("x{d}")));
        head.extend(["y".to_string(), "best_so_far".to_string()]);
        out.write_record(&head)?;
        for s in &self.history {
            let mut row = vec![s.iteration.to_string()];
            row.extend(s.x.iter().map(|v| v.to_string()));
            row.push(s.y.map_or(String::new(), |y| y.to_string()));
            row.push(s.best_so_far.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Sequential maximization of `objective` over `[0, 1]^dim`. A failed or
/// non-finite evaluation is recorded as the worst value seen so far.
pub fn bo_optimize<F>(mut objective: F, dim: usize, budget: usize, cfg: &BoConfig, seed: u64) -> Result<BoResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    cfg.gp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = GpDataset::default();
    let mut history = Vec::with_capacity(budget);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for iteration in 0..budget {
        let x = if iteration < cfg.n_init || data.is_empty() {
            random_point(&mut rng, dim)
        } else {
            acquire_next(&data, &cfg.gp, &cfg.acquisition, dim, &mut rng)?
        };
        let y = match objective(&x) {
            Ok(v) if v.is_finite() => Some(v),
            _ => None,
        };
        let stored = y.or_else(|| data.values.iter().cloned().reduce(f64::min));
        if let Some(v) = stored {
            data.push(x.clone(), v);
        }
        if let Some(v) = y {
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((x.clone(), v));
            }
        }
        history.push(BoStep {
            iteration,
            x,
            y,
            best_so_far: best.as_ref().map_or(f64::NEG_INFINITY, |b| b.1),
        });
    }
    let (x_best, y_best) = best.ok_or_else(|| Error::PlanningFailure("every objective evaluation failed".into()))?;
    Ok(BoResult { x_best, y_best, history })
}
