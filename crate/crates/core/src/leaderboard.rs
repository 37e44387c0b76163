//! Leaderboards: scores, intervals and approximate ranks for every model.

use serde::{Deserialize, Serialize};

use crate::bt::{
    approximate_ranks, bootstrap_intervals, fit_bt_stats, marginal_intervals, simultaneous_set, FitOptions,
    IntervalMethod, PairStats, ScoreIntervals, DEFAULT_RIDGE,
};
use crate::error::{Error, Result};
use crate::model::BattleLog;
use crate::np_bt::{delta_intervals, NpBtReading};
use crate::win_matrix::{estimate_win_matrix_with, WinMatrixOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    /// Reweighted Bradley-Terry maximum likelihood.
    Bt,
    /// Nonparametric BT score of the IPW win matrix.
    Npbt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplicity {
    None,
    Chi2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOptions {
    pub alpha: f64,
    pub method: ScoreMethod,
    pub interval: IntervalMethod,
    pub multiplicity: Multiplicity,
    pub ridge: f64,
    pub boot_reps: usize,
    pub seed: u64,
    pub np_reading: NpBtReading,
    /// Use the full win-matrix covariance in delta-method intervals.
    pub full_covariance: bool,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            method: ScoreMethod::Bt,
            interval: IntervalMethod::Sandwich,
            multiplicity: Multiplicity::Chi2,
            ridge: DEFAULT_RIDGE,
            boot_reps: 1000,
            seed: 0,
            np_reading: NpBtReading::PathAverage,
            full_covariance: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderboardEntry {
    pub model: String,
    /// Coefficient relative to the anchor model.
    pub xi: f64,
    /// `xi` shifted so the scores of all ranked models average to zero.
    pub score_centered: f64,
    pub lo: f64,
    pub hi: f64,
    pub rank_lower: usize,
    pub rank_upper: usize,
    pub n_battles: u64,
}

/// One row of interval-chart data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalRow {
    pub model: String,
    pub series: &'static str,
    pub y: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Leaderboard {
    pub alpha: f64,
    pub method: ScoreMethod,
    pub interval: IntervalMethod,
    pub multiplicity: Multiplicity,
    pub anchor: String,
    pub num_records: usize,
    /// `rank_lower` is the best rank and `rank_upper` the worst rank
    /// consistent with the intervals.
    pub rank_semantics: &'static str,
    pub entries: Vec<LeaderboardEntry>,
    #[serde(skip)]
    pub chart: Vec<IntervalRow>,
}

const RANK_SEMANTICS: &str =
    "rank_lower = 1 + #models whose interval lies entirely above; rank_upper = 1 + #other models whose upper bound exceeds this lower bound";

/// Score every model in `log` and rank them under `opts`.
pub fn build_leaderboard(log: &BattleLog, opts: &RankOptions) -> Result<Leaderboard> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::Validation(format!("alpha {} must lie in (0, 1)", opts.alpha)));
    }
    let (marginal, simultaneous) = match opts.method {
        ScoreMethod::Bt => {
            let stats = PairStats::from_log(log);
            let fit_opts = FitOptions::with_ridge(opts.ridge);
            let fit = fit_bt_stats(&stats, &fit_opts)?;
            match opts.interval {
                IntervalMethod::Sandwich | IntervalMethod::Delta => {
                    let marginal = marginal_intervals(&fit, opts.alpha);
                    let simultaneous = simultaneous_set(&fit, &fit.sandwich_cov, opts.alpha)?;
                    (marginal, simultaneous)
                }
                IntervalMethod::Bootstrap => {
                    let boot = bootstrap_intervals(log, &fit_opts, opts.boot_reps, opts.alpha, opts.seed)?;
                    let simultaneous = crate::bt::intervals_box(&boot, opts.alpha)?;
                    (boot.intervals, simultaneous)
                }
            }
        }
        ScoreMethod::Npbt => {
            let est =
                estimate_win_matrix_with(log, opts.alpha, WinMatrixOptions { full_covariance: opts.full_covariance })?;
            (
                delta_intervals(&est, opts.alpha, false, opts.np_reading)?,
                delta_intervals(&est, opts.alpha, true, opts.np_reading)?,
            )
        }
    };
    let chosen = match opts.multiplicity {
        Multiplicity::None => &marginal,
        Multiplicity::Chi2 => &simultaneous,
    };
    let report = approximate_ranks(chosen);
    let registry = log.registry();
    let counts = log.battle_counts();
    let mean = chosen.point.iter().sum::<f64>() / chosen.point.len() as f64;

    let mut entries: Vec<LeaderboardEntry> = report
        .entries
        .iter()
        .map(|e| LeaderboardEntry {
            model: registry.name(e.model).to_owned(),
            xi: e.score,
            score_centered: e.score - mean,
            lo: e.lo,
            hi: e.hi,
            rank_lower: e.rank_lower,
            rank_upper: e.rank_upper,
            n_battles: counts[e.model],
        })
        .collect();
    entries.sort_by(|a, b| b.xi.total_cmp(&a.xi).then_with(|| a.model.cmp(&b.model)));

    let mut chart = Vec::new();
    for (series, iv) in [("marginal", &marginal), ("simultaneous", &simultaneous)] {
        chart.extend(chart_rows(log, iv, series));
    }

    Ok(Leaderboard {
        alpha: opts.alpha,
        method: opts.method,
        interval: opts.interval,
        multiplicity: opts.multiplicity,
        anchor: registry.name(chosen.models[0]).to_owned(),
        num_records: log.len(),
        rank_semantics: RANK_SEMANTICS,
        entries,
        chart,
    })
}

fn chart_rows<'a>(
    log: &'a BattleLog,
    iv: &'a ScoreIntervals,
    series: &'static str,
) -> impl Iterator<Item = IntervalRow> + 'a {
    iv.models.iter().enumerate().map(move |(p, &m)| IntervalRow {
        model: log.registry().name(m).to_owned(),
        series,
        y: iv.point[p],
        y_lo: iv.lo[p],
        y_hi: iv.hi[p],
    })
}
