//! Nonparametric Bradley-Terry score.
//!
//! For a win matrix `θ` (with `θ'` extending it to reversed and diagonal
//! pairs) the score of model `m` is the average, over every chain of
//! comparisons that visits each other model once and ends at `m`, of the
//! summed log-odds along the chain, plus the log-odds of the anchor against
//! the chain's first model. Interior edges cancel in the average, leaving
//!
//! ```text
//! s_m = 1/(M-1) Σ_{m'≠m} [ ±logit θ(m', m) + logit θ'(anchor, m') ]
//! ```
//!
//! When `θ` is generated by Bradley-Terry coefficients `ξ` (anchor at 0) the
//! score recovers `ξ` exactly, and it stays well defined for non-transitive
//! preferences.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bt::{IntervalMethod, ScoreIntervals};
use crate::dist::{chi2_quantile, normal_quantile};
use crate::error::{Error, Result};
use crate::model::{all_pairs, num_pairs, PairKey};
use crate::win_matrix::WinMatrixEstimate;

/// Entries are clamped into `[CLAMP, 1 - CLAMP]` before taking log-odds.
pub const CLAMP: f64 = 1e-9;

/// Which form of the closed-form score to evaluate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NpBtReading {
    /// Exact path average with log-odds for the anchor term.
    #[default]
    PathAverage,
    /// Unnormalized sum in which the anchor term enters as plain odds
    /// `θ/(1-θ)`. Kept for comparison; it does not recover BT coefficients.
    LiteralOdds,
}

/// Win probabilities for every canonical pair: `θ((i, j))` is the
/// probability that `j` is preferred over `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullWinMatrix {
    m: usize,
    theta: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl FullWinMatrix {
    /// `values` follows [`all_pairs`] order.
    pub fn from_canonical(m: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_pairs(m) {
            return Err(Error::Validation(format!("{} entries supplied for {} pairs", values.len(), num_pairs(m))));
        }
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::Validation(format!("win-matrix entry {i} is NaN")));
        }
        Ok(Self { m, theta: values })
    }

    /// The logistic matrix `θ((i, j)) = e^{ξ_j} / (e^{ξ_i} + e^{ξ_j})`.
    pub fn from_coefficients(xi: &[f64]) -> Self {
        let m = xi.len();
        let theta = all_pairs(m).iter().map(|p| sigmoid(xi[p.second()] - xi[p.first()])).collect();
        Self { m, theta }
    }

    /// Empirical matrix from an IPW estimate. Unobserved pairs are set to 1/2.
    pub fn from_estimate(est: &WinMatrixEstimate) -> Self {
        let missing = est.n_obs.iter().filter(|&&n| n == 0).count();
        if missing > 0 {
            log::warn!("{missing} pair(s) have no data; their win rate is taken as 1/2");
        }
        let theta = est.theta_hat.iter().zip(&est.n_obs).map(|(&t, &n)| if n == 0 { 0.5 } else { t }).collect();
        Self { m: est.num_models, theta }
    }

    pub fn num_models(&self) -> usize {
        self.m
    }

    pub fn canonical(&self) -> &[f64] {
        &self.theta
    }

    /// `θ'((a, b))`: reversed pairs give `1 - θ`, the diagonal gives 1/2.
    pub fn get(&self, a: usize, b: usize) -> f64 {
        match a.cmp(&b) {
            std::cmp::Ordering::Equal => 0.5,
            std::cmp::Ordering::Less => self.theta[PairKey::new(a, b).unwrap().dense_index(self.m)],
            std::cmp::Ordering::Greater => 1.0 - self.theta[PairKey::new(b, a).unwrap().dense_index(self.m)],
        }
    }

    fn clamped(&self) -> Self {
        let clamped = self.theta.iter().filter(|&&t| !(CLAMP..=1.0 - CLAMP).contains(&t)).count();
        if clamped > 0 {
            log::warn!("{clamped} win-matrix entries clamped into [{CLAMP:e}, 1 - {CLAMP:e}]");
        }
        Self { m: self.m, theta: self.theta.iter().map(|t| t.clamp(CLAMP, 1.0 - CLAMP)).collect() }
    }
}

/// Derivatives `∂s_m/∂θ(a)` for every model and canonical pair.
#[derive(Debug, Clone, PartialEq)]
pub struct NpBtGradient {
    m: usize,
    pairs: Vec<PairKey>,
    values: Vec<f64>,
}

impl NpBtGradient {
    pub fn get(&self, model: usize, pair: PairKey) -> f64 {
        self.values[model * self.pairs.len() + pair.dense_index(self.m)]
    }

    pub fn row(&self, model: usize) -> &[f64] {
        let k = self.pairs.len();
        &self.values[model * k..(model + 1) * k]
    }

    pub fn pairs(&self) -> &[PairKey] {
        &self.pairs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpBtScore {
    pub s: Vec<f64>,
    pub gradient: Option<NpBtGradient>,
}

/// Anchor used by the score; the first registry model.
const ANCHOR: usize = 0;

fn score_values(w: &FullWinMatrix, reading: NpBtReading) -> Vec<f64> {
    let m = w.m;
    let anchor_term = |other: usize| match reading {
        NpBtReading::PathAverage => logit(w.get(ANCHOR, other)),
        NpBtReading::LiteralOdds => {
            let t = w.get(ANCHOR, other);
            t / (1.0 - t)
        }
    };
    (0..m)
        .map(|target| {
            let total: f64 = (0..m)
                .filter(|&other| other != target)
                .map(|other| logit(w.get(other, target)) + anchor_term(other))
                .sum();
            match reading {
                NpBtReading::PathAverage => total / (m - 1) as f64,
                NpBtReading::LiteralOdds => total,
            }
        })
        .collect()
}

fn gradient_values(w: &FullWinMatrix, reading: NpBtReading) -> NpBtGradient {
    let m = w.m;
    let pairs = all_pairs(m);
    let k = pairs.len();
    let norm = match reading {
        NpBtReading::PathAverage => 1.0 / (m - 1) as f64,
        NpBtReading::LiteralOdds => 1.0,
    };
    let mut values = vec![0.0; m * k];
    for target in 0..m {
        for (idx, pair) in pairs.iter().enumerate() {
            let t = w.theta[idx];
            let dlogit = 1.0 / (t * (1.0 - t));
            let mut d = 0.0;
            if pair.second() == target {
                d += dlogit;
            }
            if pair.first() == target {
                d -= dlogit;
            }
            if pair.first() == ANCHOR && pair.second() != target {
                d += match reading {
                    NpBtReading::PathAverage => dlogit,
                    NpBtReading::LiteralOdds => 1.0 / ((1.0 - t) * (1.0 - t)),
                };
            }
            values[target * k + idx] = d * norm;
        }
    }
    NpBtGradient { m, pairs, values }
}

/// Closed-form nonparametric BT score, with its gradient.
pub fn np_bt_score(w: &FullWinMatrix, reading: NpBtReading) -> Result<NpBtScore> {
    if w.m < 2 {
        return Err(Error::InsufficientData("the score needs at least two models".into()));
    }
    let w = w.clamped();
    Ok(NpBtScore { s: score_values(&w, reading), gradient: Some(gradient_values(&w, reading)) })
}

pub fn np_bt_gradient(w: &FullWinMatrix, reading: NpBtReading) -> Result<NpBtGradient> {
    if w.m < 2 {
        return Err(Error::InsufficientData("the score needs at least two models".into()));
    }
    Ok(gradient_values(&w.clamped(), reading))
}

/// Delta-method intervals for the score of an estimated win matrix. The
/// variance of `s_m` is `∇s_mᵀ Cov(θ̂) ∇s_m` with `Cov(θ̂)` the diagonal (or
/// full, when the estimate carries it) of `Σ̂ / T`. This is a first-order
/// approximation only.
pub fn delta_intervals(
    est: &WinMatrixEstimate,
    alpha: f64,
    simultaneous: bool,
    reading: NpBtReading,
) -> Result<ScoreIntervals> {
    let w = FullWinMatrix::from_estimate(est);
    let score = np_bt_score(&w, reading)?;
    let grad = score.gradient.as_ref().expect("gradient requested");
    let cov = est.estimate_covariance();
    let m = w.m;
    let multiplier = if simultaneous {
        chi2_quantile(1.0 - alpha, (m - 1) as f64).sqrt()
    } else {
        normal_quantile(1.0 - alpha / 2.0)
    };
    let mut lo = Vec::with_capacity(m);
    let mut hi = Vec::with_capacity(m);
    for model in 0..m {
        let g = DVector::from_row_slice(grad.row(model));
        let var = g.dot(&(&cov * &g)).max(0.0);
        let half = multiplier * var.sqrt();
        lo.push(score.s[model] - half);
        hi.push(score.s[model] + half);
    }
    Ok(ScoreIntervals {
        models: (0..m).collect(),
        point: score.s,
        lo,
        hi,
        simultaneous,
        alpha,
        method: IntervalMethod::Delta,
    })
}
