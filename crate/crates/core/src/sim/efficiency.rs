use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{draw_coefficients, mean_and_se, synthesize_battles, PlotRow, SamplingPolicy};
use crate::bt::{fit_bt_stats, marginal_intervals, FitOptions, PairStats};
use crate::dist::normal_quantile;
use crate::error::{Error, Result};
use crate::model::{num_pairs, BattleLog};
use crate::sampler::SamplerConfig;
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyConfig {
    pub m: usize,
    pub gamma: f64,
    pub scale: f64,
    /// Independent ground truths; each is run under both policies.
    pub seeds: usize,
    pub alpha: f64,
    pub seed: u64,
    pub sampler: SamplerConfig,
    /// Battles per run.
    pub horizon: usize,
    /// Spacing of the fine win-matrix width curve.
    pub grid_step: usize,
    /// Points at which the Bradley-Terry model is refitted.
    pub checkpoints: Vec<usize>,
    pub target_width: f64,
    pub ridge: f64,
}

impl Default for EfficiencyConfig {
    fn default() -> Self {
        Self {
            m: 20,
            gamma: 2.0,
            scale: 4.0,
            seeds: 20,
            alpha: 0.05,
            seed: 0,
            sampler: SamplerConfig::default(),
            horizon: 60_000,
            grid_step: 500,
            checkpoints: (1..=10).map(|k| k * 2000).collect(),
            target_width: 0.2,
            ridge: crate::bt::DEFAULT_RIDGE,
        }
    }
}

impl EfficiencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.seeds == 0 || self.horizon == 0 || self.grid_step == 0 {
            return Err(Error::Validation("m >= 2 and positive seeds, horizon and grid_step are required".into()));
        }
        if !(self.gamma > 0.0) || !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.target_width > 0.0) {
            return Err(Error::Validation("gamma, alpha and target_width are out of range".into()));
        }
        if let Some(&c) = self.checkpoints.iter().find(|&&c| c == 0 || c > self.horizon) {
            return Err(Error::Validation(format!("checkpoint {c} is outside 1..={}", self.horizon)));
        }
        Ok(())
    }

    fn grid(&self) -> Vec<usize> {
        (1..=self.horizon / self.grid_step).map(|k| k * self.grid_step).collect()
    }
}

/// Mean-over-seeds curve with a standard error per point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub x: Vec<usize>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencySummary {
    pub config: EfficiencyConfig,
    pub uniform_winmatrix: Curve,
    pub adaptive_winmatrix: Curve,
    pub uniform_bt: Curve,
    pub adaptive_bt: Curve,
    /// First grid point where the mean win-matrix width reaches the target.
    pub uniform_samples_to_target: Option<usize>,
    pub adaptive_samples_to_target: Option<usize>,
    /// `uniform / adaptive` samples to target, when both cross.
    pub samples_ratio: Option<f64>,
    /// Checkpoints where the adaptive mean win-matrix width exceeds uniform.
    pub adaptive_worse_at: Vec<usize>,
}

impl EfficiencySummary {
    pub fn plot_rows(&self) -> Vec<PlotRow> {
        let mut rows = Vec::new();
        let mut push = |series: &str, c: &Curve| {
            for ((&x, &y), &se) in c.x.iter().zip(&c.mean).zip(&c.se) {
                rows.push(PlotRow {
                    x: x as f64,
                    series: series.to_string(),
                    y,
                    y_lo: y - 1.96 * se,
                    y_hi: y + 1.96 * se,
                });
            }
        };
        push("winmatrix_uniform", &self.uniform_winmatrix);
        push("winmatrix_adaptive", &self.adaptive_winmatrix);
        push("bt_uniform", &self.uniform_bt);
        push("bt_adaptive", &self.adaptive_bt);
        rows
    }
}

/// Mean win-matrix interval width after each grid point, computed in one
/// streaming pass. Matches [`crate::win_matrix::mean_interval_width`] on the
/// corresponding prefix.
fn winmatrix_width_curve(log: &BattleLog, grid: &[usize], alpha: f64) -> Vec<f64> {
    let m = log.num_models();
    let k = num_pairs(m);
    let z = normal_quantile(1.0 - alpha / 2.0);
    let mut s1 = vec![0.0; k];
    let mut s2 = vec![0.0; k];
    let mut n = vec![0u64; k];
    let mut out = Vec::with_capacity(grid.len());
    let mut next = grid.iter().peekable();
    for (step, r) in log.records().iter().enumerate() {
        let i = r.pair.dense_index(m);
        let x = r.outcome.value() / r.sample_prob;
        s1[i] += x;
        s2[i] += x * x;
        n[i] += 1;
        let t = step + 1;
        while next.peek() == Some(&&t) {
            next.next();
            let tf = t as f64;
            let total: f64 = (0..k)
                .map(|a| {
                    if n[a] == 0 {
                        return 1.0;
                    }
                    let mean = s1[a] / tf;
                    let sigma = (s2[a] / tf - mean * mean).max(0.0);
                    2.0 * z * (sigma / tf).sqrt()
                })
                .sum();
            out.push(total / k as f64);
        }
    }
    out
}

fn bt_width_curve(log: &BattleLog, checkpoints: &[usize], alpha: f64, ridge: f64) -> Result<Vec<f64>> {
    let mut stats = PairStats::new(log.num_models());
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();
    let opts = FitOptions::with_ridge(ridge);
    for (step, r) in log.records().iter().enumerate() {
        stats.add(r);
        while next.peek() == Some(&&(step + 1)) {
            next.next();
            let width = match fit_bt_stats(&stats, &opts) {
                Ok(fit) => marginal_intervals(&fit, alpha).mean_free_width(),
                Err(e) if e.is_statistical() => f64::NAN,
                Err(e) => return Err(e),
            };
            out.push(width);
        }
    }
    Ok(out)
}

struct Run {
    winmatrix: Vec<f64>,
    bt: Vec<f64>,
}

fn run_policy(xi: &[f64], policy: &SamplingPolicy, seed: u64, cfg: &EfficiencyConfig) -> Result<Run> {
    // the same seed gives both policies the same outcome stream
    let log = synthesize_battles(xi, cfg.horizon, policy, seed)?;
    Ok(Run {
        winmatrix: winmatrix_width_curve(&log, &cfg.grid(), cfg.alpha),
        bt: bt_width_curve(&log, &cfg.checkpoints, cfg.alpha, cfg.ridge)?,
    })
}

fn average(x: Vec<usize>, runs: &[&[f64]]) -> Curve {
    let (mean, se) = (0..x.len())
        .map(|i| {
            let finite: Vec<f64> = runs.iter().map(|r| r[i]).filter(|v| v.is_finite()).collect();
            mean_and_se(finite)
        })
        .unzip();
    Curve { x, mean, se }
}

fn crossing(curve: &Curve, target: f64) -> Option<usize> {
    curve.x.iter().zip(&curve.mean).find(|(_, &w)| w <= target).map(|(&x, _)| x)
}

/// Paired uniform-versus-adaptive width curves over `cfg.seeds` ground truths.
pub fn run_efficiency_experiment(cfg: &EfficiencyConfig) -> Result<EfficiencySummary> {
    cfg.validate()?;
    let mut checkpoints = cfg.checkpoints.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let cfg = EfficiencyConfig { checkpoints, ..cfg.clone() };

    let runs: Vec<(Run, Run)> = (0..cfg.seeds)
        .into_par_iter()
        .map(|s| {
            let seed = derive_seed(cfg.seed, "efficiency", s as u64);
            let xi = draw_coefficients(cfg.m, cfg.gamma, cfg.scale, seed)?;
            let uniform = run_policy(&xi, &SamplingPolicy::Uniform, seed, &cfg)?;
            let adaptive = run_policy(&xi, &SamplingPolicy::Adaptive(cfg.sampler), seed, &cfg)?;
            Ok((uniform, adaptive))
        })
        .collect::<Result<_>>()?;

    let grid = cfg.grid();
    let pick = |f: fn(&(Run, Run)) -> &[f64]| runs.iter().map(f).collect::<Vec<_>>();
    let uniform_winmatrix = average(grid.clone(), &pick(|r| &r.0.winmatrix));
    let adaptive_winmatrix = average(grid.clone(), &pick(|r| &r.1.winmatrix));
    let uniform_bt = average(cfg.checkpoints.clone(), &pick(|r| &r.0.bt));
    let adaptive_bt = average(cfg.checkpoints.clone(), &pick(|r| &r.1.bt));

    let uniform_samples_to_target = crossing(&uniform_winmatrix, cfg.target_width);
    let adaptive_samples_to_target = crossing(&adaptive_winmatrix, cfg.target_width);
    let samples_ratio = match (uniform_samples_to_target, adaptive_samples_to_target) {
        (Some(u), Some(a)) => Some(u as f64 / a as f64),
        _ => None,
    };

    // compare at the checkpoints that land on the grid
    let adaptive_worse_at = cfg
        .checkpoints
        .iter()
        .filter_map(|c| grid.iter().position(|g| g == c).map(|i| (*c, i)))
        .filter(|&(_, i)| adaptive_winmatrix.mean[i] > uniform_winmatrix.mean[i])
        .map(|(c, _)| c)
        .collect();

    Ok(EfficiencySummary {
        config: cfg,
        uniform_winmatrix,
        adaptive_winmatrix,
        uniform_bt,
        adaptive_bt,
        uniform_samples_to_target,
        adaptive_samples_to_target,
        samples_ratio,
        adaptive_worse_at,
    })
}
