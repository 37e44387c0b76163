use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_stats, BtFit, FitOptions, PairStats};
use crate::dist::{chi2_quantile, normal_quantile};
use crate::error::{Error, Result};
use crate::model::{BattleLog, PairKey};
use crate::seeds::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    Sandwich,
    Bootstrap,
    /// Delta-method intervals for the nonparametric score.
    Delta,
}

/// Per-model score intervals, aligned with `models` (anchor first).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreIntervals {
    pub models: Vec<usize>,
    pub point: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// True when the box is the projection of a simultaneous confidence set.
    pub simultaneous: bool,
    pub alpha: f64,
    pub method: IntervalMethod,
}

impl ScoreIntervals {
    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    /// Mean width over the free (non-anchor) coordinates.
    pub fn mean_free_width(&self) -> f64 {
        let w = self.widths();
        w[1..].iter().sum::<f64>() / (w.len() - 1).max(1) as f64
    }

    pub fn covers(&self, pos: usize, value: f64) -> bool {
        self.lo[pos] <= value && value <= self.hi[pos]
    }
}

fn symmetric_box(
    models: &[usize],
    point: &[f64],
    variances: impl Iterator<Item = f64>,
    multiplier: f64,
) -> (Vec<f64>, Vec<f64>) {
    let half: Vec<f64> = std::iter::once(0.0).chain(variances.map(|v| multiplier * v.max(0.0).sqrt())).collect();
    debug_assert_eq!(half.len(), models.len());
    let lo = point.iter().zip(&half).map(|(x, h)| x - h).collect();
    let hi = point.iter().zip(&half).map(|(x, h)| x + h).collect();
    (lo, hi)
}

/// Uncorrected per-coordinate normal intervals from the sandwich covariance.
/// The anchor interval is the point `(0, 0)`.
pub fn marginal_intervals(fit: &BtFit, alpha: f64) -> ScoreIntervals {
    let z = normal_quantile(1.0 - alpha / 2.0);
    let n = fit.models.len() - 1;
    let (lo, hi) = symmetric_box(&fit.models, &fit.xi, (0..n).map(|i| fit.sandwich_cov[(i, i)]), z);
    ScoreIntervals {
        models: fit.models.clone(),
        point: fit.xi.clone(),
        lo,
        hi,
        simultaneous: false,
        alpha,
        method: IntervalMethod::Sandwich,
    }
}

/// Axis-aligned bounding box of the confidence ellipsoid
/// `{ξ : (ξ̂ - ξ)ᵀ cov⁻¹ (ξ̂ - ξ) ≤ χ²_{1-α, M-1}}`.
///
/// `cov` is the covariance of the estimator of the free coordinates, so the
/// half-width on coordinate `m` is `sqrt(χ² · cov_mm)`.
pub fn simultaneous_set(fit: &BtFit, cov: &DMatrix<f64>, alpha: f64) -> Result<ScoreIntervals> {
    simultaneous_box(&fit.models, &fit.xi, cov, alpha, IntervalMethod::Sandwich)
}

pub fn simultaneous_box(
    models: &[usize],
    point: &[f64],
    cov: &DMatrix<f64>,
    alpha: f64,
    method: IntervalMethod,
) -> Result<ScoreIntervals> {
    let n = models.len() - 1;
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::Validation(format!("covariance is {}x{}, expected {n}x{n}", cov.nrows(), cov.ncols())));
    }
    if n > 0 && cov.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("score covariance".into()));
    }
    let c = chi2_quantile(1.0 - alpha, n as f64).sqrt();
    let (lo, hi) = symmetric_box(models, point, (0..n).map(|i| cov[(i, i)]), c);
    Ok(ScoreIntervals { models: models.to_vec(), point: point.to_vec(), lo, hi, simultaneous: true, alpha, method })
}

/// Replicates and pivot intervals from a nonparametric bootstrap.
#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub intervals: ScoreIntervals,
    /// One coefficient vector per replicate, aligned with `intervals.models`.
    pub replicates: Vec<Vec<f64>>,
    /// Sample covariance of the free coordinates across replicates.
    pub covariance: DMatrix<f64>,
}

/// Simultaneous box from the bootstrap covariance of the replicates.
pub fn intervals_box(boot: &BootstrapResult, alpha: f64) -> Result<ScoreIntervals> {
    simultaneous_box(&boot.intervals.models, &boot.intervals.point, &boot.covariance, alpha, IntervalMethod::Bootstrap)
}

const MAX_RETRIES: usize = 10;

/// Linear-interpolation sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pivot bootstrap intervals `(2ξ̂ - q_{1-α/2}, 2ξ̂ - q_{α/2})` from `reps`
/// resamples of the records. Replicate `b` draws from its own substream of
/// `seed`, so results do not depend on thread count.
pub fn bootstrap_intervals(
    log: &BattleLog,
    opts: &FitOptions,
    reps: usize,
    alpha: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    if reps < 100 {
        return Err(Error::Validation(format!("bootstrap needs at least 100 replicates, got {reps}")));
    }
    let stats = PairStats::from_log(log);
    let full = fit_stats(&stats, opts, None)?;
    let m = log.num_models();
    let records: Vec<(PairKey, f64, f64)> =
        log.records().iter().map(|r| (r.pair, r.outcome.value(), 1.0 / r.sample_prob)).collect();
    let t = records.len();

    let replicates: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_for(seed, "bootstrap", b as u64);
            for _ in 0..=MAX_RETRIES {
                let mut resample = PairStats::new(m);
                for _ in 0..t {
                    let (pair, h, w) = records[rng.random_range(0..t)];
                    resample.add_raw(pair, h, w);
                }
                if resample.active_models() != full.models {
                    continue;
                }
                match fit_stats(&resample, opts, Some(&full.xi)) {
                    Ok(sol) => return Ok(sol.xi),
                    Err(e) if e.is_statistical() || matches!(e, Error::InsufficientData(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::Bootstrap(format!("replicate {b} failed after {MAX_RETRIES} redraws")))
        })
        .collect::<Result<_>>()?;

    let dim = full.models.len();
    let mut lo = vec![0.0; dim];
    let mut hi = vec![0.0; dim];
    for c in 1..dim {
        let mut column: Vec<f64> = replicates.iter().map(|r| r[c]).collect();
        column.sort_by(|a, b| a.total_cmp(b));
        let upper = quantile_sorted(&column, 1.0 - alpha / 2.0);
        let lower = quantile_sorted(&column, alpha / 2.0);
        lo[c] = 2.0 * full.xi[c] - upper;
        hi[c] = 2.0 * full.xi[c] - lower;
    }

    let n = dim - 1;
    let mean: Vec<f64> = (1..dim).map(|c| replicates.iter().map(|r| r[c]).sum::<f64>() / reps as f64).collect();
    let covariance = DMatrix::from_fn(n, n, |i, j| {
        replicates.iter().map(|r| (r[i + 1] - mean[i]) * (r[j + 1] - mean[j])).sum::<f64>() / (reps - 1) as f64
    });

    Ok(BootstrapResult {
        intervals: ScoreIntervals {
            models: full.models,
            point: full.xi,
            lo,
            hi,
            simultaneous: false,
            alpha,
            method: IntervalMethod::Bootstrap,
        },
        replicates,
        covariance,
    })
}
