//! Synthetic ground truth, battle synthesis and the experiment harnesses.
//!
//! Every experiment is a pure function of its configuration and seed; each
//! trial draws from its own named substream so trials can run in parallel.

mod coverage;
mod efficiency;
mod replay;

pub use coverage::{coverage_sweep, run_coverage_experiment, run_trial, CoverageSummary, TrialResult};
pub use efficiency::{run_efficiency_experiment, Curve, EfficiencyConfig, EfficiencySummary};
pub use replay::{replay, ReplaySnapshot, ReplaySummary};

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{all_pairs, BattleLog, BattleRecord, ModelRegistry, Outcome};
use crate::sampler::{SamplerConfig, SamplerState};
use crate::seeds::{derive_seed, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum SamplingPolicy {
    Uniform,
    Adaptive(SamplerConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub m: usize,
    /// Coefficients are drawn from `beta(1/gamma, 1/gamma)`.
    pub gamma: f64,
    pub scale: f64,
    pub t: usize,
    pub trials: usize,
    pub alpha: f64,
    pub seed: u64,
    pub sampling: SamplingPolicy,
    pub ridge: f64,
    /// Bootstrap replicates per trial; `None` skips the bootstrap.
    pub bootstrap_reps: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            m: 10,
            gamma: 2.0,
            scale: 4.0,
            t: 20_000,
            trials: 200,
            alpha: 0.05,
            seed: 0,
            sampling: SamplingPolicy::Uniform,
            ridge: crate::bt::DEFAULT_RIDGE,
            bootstrap_reps: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.t == 0 || self.trials == 0 {
            return Err(Error::Validation("m >= 2, t >= 1 and trials >= 1 are required".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Validation(format!("gamma {} must be positive", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Validation(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

/// One long-format plot row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub x: f64,
    pub series: String,
    pub y: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

/// `m` coefficients drawn i.i.d. from `beta(1/γ, 1/γ)`, scaled, then shifted
/// so the anchor (index 0) sits at 0.
pub fn draw_coefficients(m: usize, gamma: f64, scale: f64, seed: u64) -> Result<Vec<f64>> {
    let beta = Beta::new(1.0 / gamma, 1.0 / gamma)
        .map_err(|e| Error::Validation(format!("invalid beta shape for gamma {gamma}: {e}")))?;
    let mut rng = rng_for(seed, "coefficients", 0);
    let raw: Vec<f64> = (0..m).map(|_| scale * beta.sample(&mut rng)).collect();
    let anchor = raw.first().copied().unwrap_or(0.0);
    Ok(raw.into_iter().map(|x| x - anchor).collect())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Synthesize `t` battles under the logistic model for `xi`. Pairs come from
/// `policy`, and the exact serving probability is recorded with each battle.
pub fn synthesize_battles(xi: &[f64], t: usize, policy: &SamplingPolicy, seed: u64) -> Result<BattleLog> {
    let m = xi.len();
    if m < 2 {
        return Err(Error::Validation("at least two models are required".into()));
    }
    if let Some(bad) = xi.iter().find(|x| !x.is_finite()) {
        return Err(Error::Validation(format!("coefficient {bad} is not finite")));
    }
    let registry = ModelRegistry::from_ids((0..m).map(|i| format!("m{i}")))?;
    let pairs = all_pairs(m);
    let uniform_p = 1.0 / pairs.len() as f64;
    let mut pair_rng = rng_for(seed, "pairs", 0);
    let mut outcome_rng = rng_for(seed, "outcomes", 0);
    let mut sampler = match policy {
        SamplingPolicy::Uniform => None,
        SamplingPolicy::Adaptive(cfg) => Some(SamplerState::new(m, *cfg, derive_seed(seed, "sampler", 0))?),
    };

    let mut records = Vec::with_capacity(t);
    for step in 0..t {
        let (pair, p) = match sampler.as_mut() {
            None => (pairs[pair_rng.random_range(0..pairs.len())], uniform_p),
            Some(s) => s.draw_pair(),
        };
        let win = sigmoid(xi[pair.second()] - xi[pair.first()]);
        let outcome = if outcome_rng.random::<f64>() < win { Outcome::SECOND } else { Outcome::FIRST };
        let record =
            BattleRecord { time_index: step as u64, pair, outcome, sample_prob: p, voter_key: None, timestamp: None };
        if let Some(s) = sampler.as_mut() {
            s.update(&record);
        }
        records.push(record);
    }
    BattleLog::new(registry, records)
}

pub(crate) fn mean_and_se(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.into_iter().collect();
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
