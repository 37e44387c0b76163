//! Inverse-probability-weighted win-matrix estimation.
//!
//! With `X_t(a) = H_t 1{A_t = a} / P_t(a)`, the estimate of `θ*(a)` is the
//! average of `X_t(a)` over all `T` rounds and `Σ̂` is the empirical
//! covariance of the vectors `X_t`. Per-entry intervals use the normal
//! approximation `θ̂(a) ± z sqrt(Σ̂_aa / T)`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dist::normal_quantile;
use crate::error::{Error, Result};
use crate::model::{all_pairs, BattleLog, PairKey};

/// Confidence interval for one win-matrix entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntryInterval {
    pub lo: f64,
    pub hi: f64,
    /// False for pairs that were never observed; those report `[0, 1]`.
    pub defined: bool,
}

impl EntryInterval {
    pub const VACUOUS: EntryInterval = EntryInterval { lo: 0.0, hi: 1.0, defined: false };

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WinMatrixOptions {
    /// Also compute the full `|pairs| x |pairs|` covariance.
    pub full_covariance: bool,
}

#[derive(Debug, Clone)]
pub struct WinMatrixEstimate {
    pub num_models: usize,
    /// Canonical pairs in lexicographic order; every per-pair vector below is
    /// indexed the same way.
    pub pairs: Vec<PairKey>,
    pub theta_hat: Vec<f64>,
    /// Diagonal of `Σ̂`.
    pub sigma_hat: Vec<f64>,
    pub n_obs: Vec<u64>,
    pub t: usize,
    pub alpha: f64,
    pub intervals: Vec<EntryInterval>,
    pub full_cov: Option<DMatrix<f64>>,
}

impl WinMatrixEstimate {
    pub fn index_of(&self, pair: PairKey) -> usize {
        pair.dense_index(self.num_models)
    }

    pub fn theta(&self, pair: PairKey) -> f64 {
        self.theta_hat[self.index_of(pair)]
    }

    pub fn sigma(&self, pair: PairKey) -> f64 {
        self.sigma_hat[self.index_of(pair)]
    }

    pub fn interval(&self, pair: PairKey) -> EntryInterval {
        self.intervals[self.index_of(pair)]
    }

    /// Covariance of the estimate `θ̂` itself, `Σ̂ / T`, restricted to the
    /// diagonal unless the full matrix was requested.
    pub fn estimate_covariance(&self) -> DMatrix<f64> {
        let t = self.t as f64;
        match &self.full_cov {
            Some(full) => full / t,
            None => DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                self.sigma_hat.len(),
                self.sigma_hat.iter().map(|s| s / t),
            )),
        }
    }
}

/// Estimate the win matrix from `log` with per-entry intervals at level `1 - alpha`.
pub fn estimate_win_matrix(log: &BattleLog, alpha: f64) -> Result<WinMatrixEstimate> {
    estimate_win_matrix_with(log, alpha, WinMatrixOptions::default())
}

pub fn estimate_win_matrix_with(log: &BattleLog, alpha: f64, opts: WinMatrixOptions) -> Result<WinMatrixEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Validation(format!("alpha {alpha} must lie in (0, 1)")));
    }
    if log.is_empty() {
        return Err(Error::InsufficientData("win-matrix estimation needs at least one record".into()));
    }
    let m = log.num_models();
    let pairs = all_pairs(m);
    let k = pairs.len();
    let t = log.len();
    let tf = t as f64;

    let mut sum_x = vec![0.0; k];
    let mut n_obs = vec![0u64; k];
    for r in log.records() {
        let i = r.pair.dense_index(m);
        sum_x[i] += r.outcome.value() / r.sample_prob;
        n_obs[i] += 1;
    }
    let theta_hat: Vec<f64> = sum_x.iter().map(|s| s / tf).collect();

    // Two-pass variance: rounds that served another pair contribute θ̂².
    let mut dev2 = vec![0.0; k];
    for r in log.records() {
        let i = r.pair.dense_index(m);
        let d = r.outcome.value() / r.sample_prob - theta_hat[i];
        dev2[i] += d * d;
    }
    let sigma_hat: Vec<f64> =
        (0..k).map(|i| (dev2[i] + (t as u64 - n_obs[i]) as f64 * theta_hat[i] * theta_hat[i]) / tf).collect();

    let z = normal_quantile(1.0 - alpha / 2.0);
    let intervals = (0..k)
        .map(|i| {
            if n_obs[i] == 0 {
                EntryInterval::VACUOUS
            } else {
                let half = z * (sigma_hat[i] / tf).sqrt();
                EntryInterval { lo: theta_hat[i] - half, hi: theta_hat[i] + half, defined: true }
            }
        })
        .collect();

    let full_cov = opts.full_covariance.then(|| {
        // X_t(a) X_t(b) = 0 for a != b, so off-diagonal entries reduce to -θ̂_a θ̂_b.
        let mut cov = DMatrix::from_fn(k, k, |a, b| -theta_hat[a] * theta_hat[b]);
        for i in 0..k {
            cov[(i, i)] = sigma_hat[i];
        }
        cov
    });

    Ok(WinMatrixEstimate { num_models: m, pairs, theta_hat, sigma_hat, n_obs, t, alpha, intervals, full_cov })
}

/// Interval width per pair; never-observed pairs report 1.
pub fn interval_width_profile(est: &WinMatrixEstimate) -> Vec<(PairKey, f64)> {
    est.pairs.iter().zip(&est.intervals).map(|(&p, iv)| (p, if iv.defined { iv.width() } else { 1.0 })).collect()
}

/// Mean of [`interval_width_profile`].
pub fn mean_interval_width(est: &WinMatrixEstimate) -> f64 {
    let profile = interval_width_profile(est);
    profile.iter().map(|(_, w)| w).sum::<f64>() / profile.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BattleRecord, ModelRegistry, Outcome};

    fn log_of(m: usize, rows: &[(usize, usize, f64, f64)]) -> BattleLog {
        let reg = ModelRegistry::from_ids((0..m).map(|i| format!("m{i}"))).unwrap();
        let records = rows
            .iter()
            .enumerate()
            .map(|(t, &(a, b, h, p))| BattleRecord {
                time_index: t as u64,
                pair: PairKey::new(a, b).unwrap(),
                outcome: Outcome::new(h).unwrap(),
                sample_prob: p,
                voter_key: None,
                timestamp: None,
            })
            .collect();
        BattleLog::new(reg, records).unwrap()
    }

    #[test]
    fn single_record() {
        let est = estimate_win_matrix(&log_of(3, &[(1, 2, 1.0, 1.0)]), 0.05).unwrap();
        assert_eq!(est.theta(PairKey::new(1, 2).unwrap()), 1.0);
        assert_eq!(est.n_obs.iter().sum::<u64>(), 1);
    }

    #[test]
    fn two_records_hand_arithmetic() {
        // X = 2 and 0: mean 1, variance ((2-1)^2 + (0-1)^2) / 2 = 1
        let est = estimate_win_matrix(&log_of(3, &[(1, 2, 1.0, 0.5), (1, 2, 0.0, 0.5)]), 0.05).unwrap();
        let k = PairKey::new(1, 2).unwrap();
        assert!((est.theta(k) - 1.0).abs() < 1e-15);
        assert!((est.sigma(k) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unobserved_pairs_get_vacuous_interval() {
        let est = estimate_win_matrix(&log_of(3, &[(1, 2, 1.0, 1.0)]), 0.05).unwrap();
        let iv = est.interval(PairKey::new(0, 1).unwrap());
        assert_eq!(iv, EntryInterval::VACUOUS);
        let profile = interval_width_profile(&est);
        assert_eq!(profile[0].1, 1.0);
    }

    #[test]
    fn width_profile_is_hi_minus_lo() {
        let mut est = estimate_win_matrix(&log_of(2, &[(0, 1, 1.0, 1.0)]), 0.05).unwrap();
        est.intervals[0] = EntryInterval { lo: 0.4, hi: 0.6, defined: true };
        assert!((interval_width_profile(&est)[0].1 - 0.2).abs() < 1e-15);
    }

    #[test]
    fn empty_log_is_insufficient() {
        let log = log_of(2, &[]);
        assert!(matches!(estimate_win_matrix(&log, 0.05), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn ipw_scaling_identity() {
        // all records on one pair with a common P: θ̂ P T = Σ H
        let rows: Vec<_> = (0..50).map(|i| (0, 2, (i % 3) as f64 / 2.0, 0.25)).collect();
        let log = log_of(3, &rows);
        let est = estimate_win_matrix(&log, 0.05).unwrap();
        let sum_h: f64 = rows.iter().map(|r| r.2).sum();
        let k = PairKey::new(0, 2).unwrap();
        assert!((est.theta(k) * 0.25 * 50.0 - sum_h).abs() < 1e-12);
    }

    #[test]
    fn intervals_contain_point_estimate() {
        let rows: Vec<_> = (0..40).map(|i| (i % 2, 2, (i % 5) as f64 / 4.0, 0.5)).collect();
        let est = estimate_win_matrix(&log_of(3, &rows), 0.1).unwrap();
        for (i, iv) in est.intervals.iter().enumerate() {
            if est.n_obs[i] > 0 {
                assert!(iv.lo <= est.theta_hat[i] && est.theta_hat[i] <= iv.hi);
                assert!(est.sigma_hat[i] >= 0.0);
            }
        }
    }

    #[test]
    fn full_covariance_matches_outer_product_definition() {
        let rows = [(0, 1, 1.0, 0.5), (0, 2, 0.0, 0.25), (1, 2, 1.0, 0.25), (0, 1, 0.5, 0.5)];
        let log = log_of(3, &rows);
        let est = estimate_win_matrix_with(&log, 0.05, WinMatrixOptions { full_covariance: true }).unwrap();
        let full = est.full_cov.as_ref().unwrap();
        // brute force (1/T) Σ (X_t - θ̂)(X_t - θ̂)ᵀ
        let k = est.pairs.len();
        let mut want = DMatrix::<f64>::zeros(k, k);
        for r in log.records() {
            let mut x = vec![0.0; k];
            x[r.pair.dense_index(3)] = r.outcome.value() / r.sample_prob;
            for a in 0..k {
                for b in 0..k {
                    want[(a, b)] += (x[a] - est.theta_hat[a]) * (x[b] - est.theta_hat[b]) / rows.len() as f64;
                }
            }
        }
        assert!((full - want).abs().max() < 1e-12);
    }
}
