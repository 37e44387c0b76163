//! Reweighted Bradley-Terry estimation.
//!
//! The fit minimizes
//! `Σ_t (1/P_t(A_t)) ℓ(H_t, σ(ξ[A_t.second] - ξ[A_t.first])) + ridge ‖ξ‖²`
//! with `ℓ` the binary cross-entropy and `ξ[anchor] = 0`. Outcomes in
//! `[0, 1]` are soft labels, so ties contribute `-½ log p - ½ log(1-p)`.
//!
//! All per-record quantities the fit and the sandwich covariance need are
//! sums over records of the same pair, so the log is first reduced to
//! [`PairStats`].

mod intervals;
mod rank;

pub use intervals::{
    bootstrap_intervals, intervals_box, marginal_intervals, simultaneous_box, simultaneous_set, BootstrapResult,
    IntervalMethod, ScoreIntervals,
};
pub use rank::{approximate_ranks, true_ranks, RankEntry, RankingReport};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{all_pairs, BattleLog, BattleRecord, PairKey};

pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Per-pair weighted sufficient statistics of a battle log, with `w = 1/P`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStats {
    num_models: usize,
    pairs: Vec<PairKey>,
    t: usize,
    n: Vec<u64>,
    sw: Vec<f64>,
    swh: Vec<f64>,
    sw2: Vec<f64>,
    sw2h: Vec<f64>,
    sw2h2: Vec<f64>,
}

impl PairStats {
    pub fn new(num_models: usize) -> Self {
        let pairs = all_pairs(num_models);
        let k = pairs.len();
        Self {
            num_models,
            pairs,
            t: 0,
            n: vec![0; k],
            sw: vec![0.0; k],
            swh: vec![0.0; k],
            sw2: vec![0.0; k],
            sw2h: vec![0.0; k],
            sw2h2: vec![0.0; k],
        }
    }

    pub fn from_log(log: &BattleLog) -> Self {
        let mut stats = Self::new(log.num_models());
        for r in log.records() {
            stats.add(r);
        }
        stats
    }

    pub fn add(&mut self, record: &BattleRecord) {
        self.add_raw(record.pair, record.outcome.value(), 1.0 / record.sample_prob);
    }

    pub fn add_raw(&mut self, pair: PairKey, h: f64, w: f64) {
        let i = pair.dense_index(self.num_models);
        self.t += 1;
        self.n[i] += 1;
        self.sw[i] += w;
        self.swh[i] += w * h;
        self.sw2[i] += w * w;
        self.sw2h[i] += w * w * h;
        self.sw2h2[i] += w * w * h * h;
    }

    pub fn num_models(&self) -> usize {
        self.num_models
    }

    pub fn num_records(&self) -> usize {
        self.t
    }

    pub fn pair_count(&self, pair: PairKey) -> u64 {
        self.n[pair.dense_index(self.num_models)]
    }

    /// Models that appear in at least one record, in index order.
    pub fn active_models(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_models];
        for (k, p) in self.pairs.iter().enumerate() {
            if self.n[k] > 0 {
                seen[p.first()] = true;
                seen[p.second()] = true;
            }
        }
        (0..self.num_models).filter(|&m| seen[m]).collect()
    }

    /// Battles per model.
    pub fn model_counts(&self) -> Vec<u64> {
        let mut out = vec![0; self.num_models];
        for (k, p) in self.pairs.iter().enumerate() {
            out[p.first()] += self.n[k];
            out[p.second()] += self.n[k];
        }
        out
    }

    fn total_weight(&self) -> f64 {
        self.sw.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub ridge: f64,
    /// Convergence threshold on the max-norm of the gradient of the
    /// weight-normalized objective.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { ridge: DEFAULT_RIDGE, tolerance: 1e-8, max_iterations: 500 }
    }
}

impl FitOptions {
    pub fn with_ridge(ridge: f64) -> Self {
        Self { ridge, ..Self::default() }
    }
}

/// The reweighted objective restricted to a set of active models.
///
/// Coordinates are the free coefficients: `models[1..]`, with `models[0]`
/// the anchor held at 0.
pub struct BtObjective<'a> {
    stats: &'a PairStats,
    models: Vec<usize>,
    // position of each registry model within `models`
    slot: Vec<Option<usize>>,
    ridge: f64,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> BtObjective<'a> {
    pub fn new(stats: &'a PairStats, models: Vec<usize>, ridge: f64) -> Self {
        let mut slot = vec![None; stats.num_models];
        for (p, &m) in models.iter().enumerate() {
            slot[m] = Some(p);
        }
        Self { stats, models, slot, ridge }
    }

    pub fn dim(&self) -> usize {
        self.models.len() - 1
    }

    pub fn models(&self) -> &[usize] {
        &self.models
    }

    // (free index of first, free index of second, pair slot) for pairs with data
    fn terms(&self) -> impl Iterator<Item = (Option<usize>, Option<usize>, usize)> + '_ {
        self.stats.pairs.iter().enumerate().filter_map(move |(k, p)| {
            if self.stats.n[k] == 0 {
                return None;
            }
            let i = self.slot[p.first()]?;
            let j = self.slot[p.second()]?;
            Some((i.checked_sub(1), j.checked_sub(1), k))
        })
    }

    fn diff(free: &[f64], i: Option<usize>, j: Option<usize>) -> f64 {
        j.map_or(0.0, |j| free[j]) - i.map_or(0.0, |i| free[i])
    }

    pub fn value(&self, free: &[f64]) -> f64 {
        let s = self.stats;
        let mut f = 0.0;
        for (i, j, k) in self.terms() {
            let d = Self::diff(free, i, j);
            f += s.swh[k] * softplus(-d) + (s.sw[k] - s.swh[k]) * softplus(d);
        }
        f + self.ridge * free.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn gradient(&self, free: &[f64]) -> Vec<f64> {
        let s = self.stats;
        let mut g: Vec<f64> = free.iter().map(|x| 2.0 * self.ridge * x).collect();
        for (i, j, k) in self.terms() {
            let d = Self::diff(free, i, j);
            let gd = s.sw[k] * sigmoid(d) - s.swh[k];
            if let Some(j) = j {
                g[j] += gd;
            }
            if let Some(i) = i {
                g[i] -= gd;
            }
        }
        g
    }

    pub fn hessian(&self, free: &[f64]) -> DMatrix<f64> {
        let s = self.stats;
        let n = self.dim();
        let mut h = DMatrix::from_diagonal_element(n, n, 2.0 * self.ridge);
        for (i, j, k) in self.terms() {
            let p = sigmoid(Self::diff(free, i, j));
            add_edge(&mut h, i, j, s.sw[k] * p * (1.0 - p));
        }
        h
    }

    /// `Σ_t g_t g_tᵀ` for the per-record gradients `g_t` (ridge excluded).
    pub fn score_outer_product(&self, free: &[f64]) -> DMatrix<f64> {
        let s = self.stats;
        let n = self.dim();
        let mut g = DMatrix::zeros(n, n);
        for (i, j, k) in self.terms() {
            let p = sigmoid(Self::diff(free, i, j));
            // Σ w² (p - h)²
            let c = p * p * s.sw2[k] - 2.0 * p * s.sw2h[k] + s.sw2h2[k];
            add_edge(&mut g, i, j, c.max(0.0));
        }
        g
    }
}

// add c · e eᵀ with e = +1 at `j`, -1 at `i` (anchor coordinates absent)
fn add_edge(mat: &mut DMatrix<f64>, i: Option<usize>, j: Option<usize>, c: f64) {
    if let Some(j) = j {
        mat[(j, j)] += c;
    }
    if let Some(i) = i {
        mat[(i, i)] += c;
    }
    if let (Some(i), Some(j)) = (i, j) {
        mat[(i, j)] -= c;
        mat[(j, i)] -= c;
    }
}

/// A fitted Bradley-Terry model.
#[derive(Debug, Clone)]
pub struct BtFit {
    pub num_models: usize,
    /// Fitted models in index order; `models[0]` is the anchor.
    pub models: Vec<usize>,
    /// Coefficients aligned with `models`; `xi[0] == 0`.
    pub xi: Vec<f64>,
    /// Sandwich covariance of the free coefficients `xi[1..]`, already scaled
    /// to the sample size (the covariance of the estimator itself).
    pub sandwich_cov: DMatrix<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub ridge: f64,
    /// Registry models with no battles, excluded from the fit.
    pub dropped: Vec<usize>,
    pub num_records: usize,
}

impl BtFit {
    pub fn anchor(&self) -> usize {
        self.models[0]
    }

    pub fn xi_of(&self, model: usize) -> Option<f64> {
        self.models.iter().position(|&m| m == model).map(|p| self.xi[p])
    }

    /// Sandwich variance of the coefficient at position `pos` in `models`.
    pub fn variance(&self, pos: usize) -> f64 {
        if pos == 0 {
            0.0
        } else {
            self.sandwich_cov[(pos - 1, pos - 1)]
        }
    }
}

/// Result of the optimizer before any covariance is attached.
#[derive(Debug, Clone)]
pub struct BtSolution {
    pub models: Vec<usize>,
    pub xi: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn reachable(start: usize, n: usize, adj: &[Vec<usize>]) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen
}

/// Reject comparison graphs for which the optimum is not unique. The
/// separation check only applies to unpenalized fits.
fn check_identifiable(stats: &PairStats, models: &[usize], check_separation: bool) -> Result<()> {
    let n = models.len();
    let mut slot = vec![usize::MAX; stats.num_models];
    for (p, &m) in models.iter().enumerate() {
        slot[m] = p;
    }
    let mut undirected = vec![Vec::new(); n];
    // edge u -> v when v took preference mass from u
    let mut beats = vec![Vec::new(); n];
    let mut beaten = vec![Vec::new(); n];
    for (k, p) in stats.pairs.iter().enumerate() {
        if stats.n[k] == 0 {
            continue;
        }
        let (i, j) = (slot[p.first()], slot[p.second()]);
        undirected[i].push(j);
        undirected[j].push(i);
        if stats.swh[k] > 0.0 {
            beats[i].push(j);
            beaten[j].push(i);
        }
        if stats.sw[k] - stats.swh[k] > 0.0 {
            beats[j].push(i);
            beaten[i].push(j);
        }
    }
    let connected = reachable(0, n, &undirected);
    if connected.iter().any(|c| !c) {
        let cluster = (0..n).filter(|&p| !connected[p]).map(|p| models[p]).collect();
        return Err(Error::SingularInformation { cluster });
    }
    if check_separation {
        let fwd = reachable(0, n, &beats);
        let bwd = reachable(0, n, &beaten);
        if let Some(p) = (0..n).find(|&p| !fwd[p] || !bwd[p]) {
            return Err(Error::NonIdentifiable(format!(
                "model {} is perfectly separated from the anchor (maximum likelihood estimate diverges)",
                models[p]
            )));
        }
    }
    Ok(())
}

/// Minimize the reweighted objective over the models present in `stats`.
///
/// `start`, when given, is a warm start aligned with the active models.
pub fn fit_stats(stats: &PairStats, opts: &FitOptions, start: Option<&[f64]>) -> Result<BtSolution> {
    if opts.ridge < 0.0 || !opts.ridge.is_finite() {
        return Err(Error::Validation(format!("ridge {} must be finite and nonnegative", opts.ridge)));
    }
    let models = stats.active_models();
    if models.len() < 2 {
        return Err(Error::InsufficientData("need battles between at least two models".into()));
    }
    if stats.num_records() < models.len() {
        return Err(Error::InsufficientData(format!(
            "{} records cannot identify {} models",
            stats.num_records(),
            models.len()
        )));
    }
    check_identifiable(stats, &models, opts.ridge == 0.0)?;

    let objective = BtObjective::new(stats, models.clone(), opts.ridge);
    let scale = stats.total_weight();
    let n = objective.dim();
    let mut z: Vec<f64> = match start {
        Some(s) if s.len() == n + 1 => s[1..].to_vec(),
        _ => vec![0.0; n],
    };

    let mut f = objective.value(&z);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let mut converged = false;
    while iterations < opts.max_iterations {
        let g = objective.gradient(&z);
        grad_norm = g.iter().fold(0.0f64, |acc, x| acc.max(x.abs())) / scale;
        if grad_norm < opts.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let gv = DVector::from_vec(g.clone());
        let step = match objective.hessian(&z).cholesky() {
            Some(chol) => -chol.solve(&gv),
            // indefinite or singular: plain gradient descent
            None => -gv / scale,
        };
        let slope = step.dot(&DVector::from_vec(g));
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            let ft = objective.value(&trial);
            // near the optimum the decrease drops below rounding of f, so
            // fall back to the gradient norm
            let flat = (ft - f).abs() <= 1e-12 * f.abs().max(1.0);
            if ft <= f + 1e-4 * t * slope
                || flat && objective.gradient(&trial).iter().fold(0.0f64, |acc, x| acc.max(x.abs())) / scale < grad_norm
            {
                z = trial;
                f = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no representable descent left; accept if already at working precision
            converged = grad_norm < opts.tolerance * 1e2;
            break;
        }
    }
    if !converged {
        log::warn!("Bradley-Terry fit stopped after {iterations} iterations with gradient norm {grad_norm:e}");
    }

    let mut xi = Vec::with_capacity(n + 1);
    xi.push(0.0);
    xi.extend(z);
    Ok(BtSolution { models, xi, grad_norm, iterations, converged })
}

/// Sandwich covariance `H⁻¹ G H⁻¹` of the free coefficients at `xi`, with
/// `H` the Hessian of the summed objective and `G = Σ_t g_t g_tᵀ`. This is
/// `(1/T) Ĥ⁻¹ Ĝ Ĥ⁻¹` written with per-record averages.
pub fn sandwich_from_stats(stats: &PairStats, models: &[usize], xi: &[f64], ridge: f64) -> Result<DMatrix<f64>> {
    check_identifiable(stats, models, false)?;
    let objective = BtObjective::new(stats, models.to_vec(), ridge);
    let free = &xi[1..];
    let h = objective.hessian(free);
    let g = objective.score_outer_product(free);
    let h_inv = h
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NotPositiveDefinite("Hessian of the Bradley-Terry objective".into()))?;
    let cov = &h_inv * g * &h_inv;
    Ok((&cov + cov.transpose()) * 0.5)
}

/// Fit the reweighted Bradley-Terry model and attach its sandwich covariance.
pub fn fit_bt(log: &BattleLog, opts: &FitOptions) -> Result<BtFit> {
    let stats = PairStats::from_log(log);
    fit_bt_stats(&stats, opts)
}

pub fn fit_bt_stats(stats: &PairStats, opts: &FitOptions) -> Result<BtFit> {
    let sol = fit_stats(stats, opts, None)?;
    let dropped: Vec<usize> = (0..stats.num_models()).filter(|m| !sol.models.contains(m)).collect();
    if !dropped.is_empty() {
        log::warn!("models {dropped:?} have no battles and were dropped from the fit");
    }
    let sandwich_cov = sandwich_from_stats(stats, &sol.models, &sol.xi, opts.ridge)?;
    Ok(BtFit {
        num_models: stats.num_models(),
        models: sol.models,
        xi: sol.xi,
        sandwich_cov,
        grad_norm: sol.grad_norm,
        iterations: sol.iterations,
        converged: sol.converged,
        ridge: opts.ridge,
        dropped,
        num_records: stats.num_records(),
    })
}

/// Recompute the sandwich covariance of `fit` against `log`.
pub fn sandwich_covariance(fit: &BtFit, log: &BattleLog) -> Result<DMatrix<f64>> {
    let stats = PairStats::from_log(log);
    if stats.active_models() != fit.models {
        return Err(Error::Validation("log does not cover the same models as the fit".into()));
    }
    sandwich_from_stats(&stats, &fit.models, &fit.xi, fit.ridge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelRegistry, Outcome};

    pub(crate) fn log_of(m: usize, rows: &[(usize, usize, f64)]) -> BattleLog {
        let reg = ModelRegistry::from_ids((0..m).map(|i| format!("m{i}"))).unwrap();
        let p = 1.0 / crate::model::num_pairs(m) as f64;
        let records = rows
            .iter()
            .enumerate()
            .map(|(t, &(a, b, h))| BattleRecord {
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

    fn two_model_log() -> BattleLog {
        log_of(2, &[(0, 1, 1.0), (0, 1, 1.0), (0, 1, 1.0), (0, 1, 0.0)])
    }

    #[test]
    fn two_model_closed_form() {
        let fit = fit_bt(&two_model_log(), &FitOptions::with_ridge(0.0)).unwrap();
        assert_eq!(fit.xi[0], 0.0);
        assert!((fit.xi[1] - 3f64.ln()).abs() < 1e-9, "{}", fit.xi[1]);
        assert!(fit.converged && fit.grad_norm < 1e-8);
    }

    #[test]
    fn symmetric_data_gives_zero() {
        let mut rows = Vec::new();
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            rows.extend([(a, b, 1.0), (a, b, 0.0), (a, b, 0.5)]);
        }
        let fit = fit_bt(&log_of(3, &rows), &FitOptions::with_ridge(0.0)).unwrap();
        assert!(fit.xi.iter().all(|x| x.abs() < 1e-10), "{:?}", fit.xi);
    }

    #[test]
    fn separation_without_ridge_is_rejected() {
        let log = log_of(2, &[(0, 1, 1.0), (0, 1, 1.0)]);
        assert!(matches!(fit_bt(&log, &FitOptions::with_ridge(0.0)), Err(Error::NonIdentifiable(_))));
        let fit = fit_bt(&log, &FitOptions::with_ridge(0.1)).unwrap();
        assert!(fit.xi[1] > 0.0 && fit.xi[1].is_finite());
    }

    #[test]
    fn disconnected_graph_names_cluster() {
        let log = log_of(4, &[(0, 1, 1.0), (0, 1, 0.0), (2, 3, 1.0), (2, 3, 0.0)]);
        match fit_bt(&log, &FitOptions::default()) {
            Err(Error::SingularInformation { cluster }) => assert_eq!(cluster, vec![2, 3]),
            other => panic!("expected singular information, got {other:?}"),
        }
    }

    #[test]
    fn unplayed_models_are_dropped() {
        let log = log_of(3, &[(1, 2, 1.0), (1, 2, 0.0), (1, 2, 1.0)]);
        let fit = fit_bt(&log, &FitOptions::with_ridge(0.0)).unwrap();
        assert_eq!(fit.dropped, vec![0]);
        assert_eq!(fit.anchor(), 1);
        assert!((fit.xi_of(2).unwrap() - 2f64.ln()).abs() < 1e-7);
    }

    #[test]
    fn two_model_sandwich_matches_analytic() {
        // p = 3/4, H = 4 p (1-p) = 3/4, G = 3 (1/4)² + (3/4)² = 3/4 → H⁻¹GH⁻¹ = 4/3
        let fit = fit_bt(&two_model_log(), &FitOptions::with_ridge(0.0)).unwrap();
        assert!((fit.sandwich_cov[(0, 0)] - 4.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn duplicating_records_halves_covariance() {
        let rows = [(0, 1, 1.0), (0, 1, 0.0), (0, 2, 1.0), (1, 2, 0.0), (1, 2, 1.0), (0, 2, 0.0), (0, 1, 1.0)];
        let doubled: Vec<_> = rows.iter().chain(rows.iter()).copied().collect();
        let opts = FitOptions::with_ridge(0.0);
        let a = fit_bt(&log_of(3, &rows), &opts).unwrap();
        let b = fit_bt(&log_of(3, &doubled), &opts).unwrap();
        assert!((&a.sandwich_cov * 0.5 - &b.sandwich_cov).abs().max() < 1e-12);
    }

    #[test]
    fn sandwich_covariance_recomputes_fit_value() {
        let log = log_of(3, &[(0, 1, 1.0), (0, 1, 0.0), (0, 2, 1.0), (1, 2, 0.0), (1, 2, 1.0), (0, 2, 0.0)]);
        let fit = fit_bt(&log, &FitOptions::default()).unwrap();
        let cov = sandwich_covariance(&fit, &log).unwrap();
        assert!((cov - &fit.sandwich_cov).abs().max() < 1e-15);
    }
}
