//! Active pair selection.
//!
//! After a warm-up that serves every pair a fixed number of times, pair `a`
//! is drawn with probability proportional to the shrinkage of its interval
//! half-width from one more observation,
//! `sqrt(Σ̂_aa / n_a) - sqrt(Σ̂_aa / (n_a + 1))`, mixed with a uniform floor
//! so every pair keeps probability at least `floor / |pairs|`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{all_pairs, BattleLog, BattleRecord, PairKey};
use crate::seeds::rng_for;

/// Variance fed into the allocation rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceSource {
    /// The IPW covariance diagonal `Σ̂_aa`.
    #[default]
    Ipw,
    /// Second moment of the raw outcomes on the pair, `Σ H² / n_a`. Free of
    /// the `1/P` weights, so a vote served at a small probability cannot
    /// inflate its own pair's weight.
    PerVote,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Mixing weight δ of the uniform floor, in `[0, 1]`.
    pub floor: f64,
    /// Observations every pair receives, round-robin, before the adaptive
    /// rule takes over.
    pub warmup_rounds: u64,
    #[serde(default)]
    pub variance: VarianceSource,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { floor: 0.05, warmup_rounds: 2, variance: VarianceSource::Ipw }
    }
}

/// Streaming state of the sampler: per-pair sums of `X_t(a)` and `X_t(a)²`
/// that reproduce the diagonal of the IPW covariance without storing records.
#[derive(Debug, Clone)]
pub struct SamplerState {
    m: usize,
    pairs: Vec<PairKey>,
    cfg: SamplerConfig,
    sum_x: Vec<f64>,
    sum_x2: Vec<f64>,
    sum_h2: Vec<f64>,
    n_obs: Vec<u64>,
    t: u64,
    rng: ChaCha8Rng,
}

impl SamplerState {
    pub fn new(num_models: usize, cfg: SamplerConfig, seed: u64) -> Result<Self> {
        if num_models < 2 {
            return Err(Error::Validation("sampling needs at least two models".into()));
        }
        if !(0.0..=1.0).contains(&cfg.floor) {
            return Err(Error::Validation(format!("floor {} must lie in [0, 1]", cfg.floor)));
        }
        let pairs = all_pairs(num_models);
        let k = pairs.len();
        Ok(Self {
            m: num_models,
            pairs,
            cfg,
            sum_x: vec![0.0; k],
            sum_x2: vec![0.0; k],
            sum_h2: vec![0.0; k],
            n_obs: vec![0; k],
            t: 0,
            rng: rng_for(seed, "sampler", 0),
        })
    }

    /// State after observing every record of `log`.
    pub fn from_log(log: &BattleLog, cfg: SamplerConfig, seed: u64) -> Result<Self> {
        let mut state = Self::new(log.num_models(), cfg, seed)?;
        for r in log.records() {
            state.update(r);
        }
        Ok(state)
    }

    pub fn pairs(&self) -> &[PairKey] {
        &self.pairs
    }

    pub fn n_obs(&self) -> &[u64] {
        &self.n_obs
    }

    pub fn num_records(&self) -> u64 {
        self.t
    }

    pub fn config(&self) -> SamplerConfig {
        self.cfg
    }

    /// Current `Σ̂_aa` for every pair.
    pub fn sigma_diag(&self) -> Vec<f64> {
        if self.t == 0 {
            return vec![0.0; self.pairs.len()];
        }
        let t = self.t as f64;
        self.sum_x
            .iter()
            .zip(&self.sum_x2)
            .map(|(s, s2)| {
                let mean = s / t;
                (s2 / t - mean * mean).max(0.0)
            })
            .collect()
    }

    /// Current IPW estimate `θ̂(a)` for every pair.
    pub fn theta_hat(&self) -> Vec<f64> {
        let t = (self.t as f64).max(1.0);
        self.sum_x.iter().map(|s| s / t).collect()
    }

    pub fn in_warmup(&self) -> bool {
        self.n_obs.iter().any(|&n| n < self.cfg.warmup_rounds)
    }

    /// The adaptive distribution over pairs, in [`all_pairs`] order.
    pub fn pair_probabilities(&self) -> Vec<f64> {
        let k = self.pairs.len() as f64;
        let sigma = match self.cfg.variance {
            VarianceSource::Ipw => self.sigma_diag(),
            VarianceSource::PerVote => {
                self.sum_h2.iter().zip(&self.n_obs).map(|(s, &n)| s / (n.max(1) as f64)).collect()
            }
        };
        let weights: Vec<f64> = sigma
            .iter()
            .zip(&self.n_obs)
            .map(|(&s, &n)| {
                if n == 0 {
                    0.0
                } else {
                    let n = n as f64;
                    ((s / n).sqrt() - (s / (n + 1.0)).sqrt()).max(0.0)
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return vec![1.0 / k; self.pairs.len()];
        }
        let delta = self.cfg.floor;
        weights.iter().map(|w| (1.0 - delta) * w / total + delta / k).collect()
    }

    /// Next pair to serve and the probability it was served with.
    ///
    /// During warm-up pairs are served round-robin (least-observed first) and
    /// the recorded probability is the cycle frequency `1/|pairs|`.
    pub fn draw_pair(&mut self) -> (PairKey, f64) {
        if self.in_warmup() {
            let (idx, _) = self.n_obs.iter().enumerate().min_by_key(|&(i, &n)| (n, i)).expect("at least one pair");
            return (self.pairs[idx], 1.0 / self.pairs.len() as f64);
        }
        let probs = self.pair_probabilities();
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                chosen = Some(i);
                if u < acc {
                    break;
                }
            }
        }
        let i = chosen.expect("probabilities sum to one");
        (self.pairs[i], probs[i])
    }

    /// Incorporate one observed battle.
    pub fn update(&mut self, record: &BattleRecord) {
        let i = record.pair.dense_index(self.m);
        let x = record.outcome.value() / record.sample_prob;
        self.sum_x[i] += x;
        self.sum_x2[i] += x * x;
        self.sum_h2[i] += record.outcome.value() * record.outcome.value();
        self.n_obs[i] += 1;
        self.t += 1;
    }

    /// Plan the next `k` assignments without observing outcomes. Each planned
    /// pair counts as pending when the following one is chosen.
    pub fn plan(&self, k: usize) -> Vec<(PairKey, f64)> {
        let mut virt = self.clone();
        (0..k)
            .map(|_| {
                let (pair, p) = virt.draw_pair();
                virt.n_obs[pair.dense_index(virt.m)] += 1;
                (pair, p)
            })
            .collect()
    }
}
