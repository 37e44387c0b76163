use serde::Serialize;

use super::PlotRow;
use crate::error::{Error, Result};
use crate::leaderboard::{build_leaderboard, Leaderboard, RankOptions};
use crate::model::BattleLog;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplaySnapshot {
    pub t: usize,
    /// Median interval width across ranked models, anchor excluded.
    pub median_width: f64,
    pub leaderboard: Leaderboard,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplaySummary {
    pub num_records: usize,
    /// Requested checkpoints past the end of the log, replaced by its length.
    pub truncated: Vec<usize>,
    pub snapshots: Vec<ReplaySnapshot>,
}

impl ReplaySummary {
    /// One row per model per checkpoint: `x` is the prefix length and the
    /// series is the model id.
    pub fn plot_rows(&self) -> Vec<PlotRow> {
        self.snapshots
            .iter()
            .flat_map(|s| {
                s.leaderboard.entries.iter().map(move |e| PlotRow {
                    x: s.t as f64,
                    series: e.model.clone(),
                    y: e.xi,
                    y_lo: e.lo,
                    y_hi: e.hi,
                })
            })
            .collect()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Refit and rank on each prefix of `log` named in `checkpoints`.
pub fn replay(log: &BattleLog, checkpoints: &[usize], opts: &RankOptions) -> Result<ReplaySummary> {
    if log.is_empty() {
        return Err(Error::InsufficientData("replay needs a nonempty log".into()));
    }
    if checkpoints.is_empty() {
        return Err(Error::Validation("replay needs at least one checkpoint".into()));
    }
    let n = log.len();
    let truncated: Vec<usize> = checkpoints.iter().copied().filter(|&c| c > n).collect();
    if !truncated.is_empty() {
        log::warn!("checkpoints {truncated:?} exceed the log length {n}; using {n} instead");
    }
    let mut points: Vec<usize> = checkpoints.iter().map(|&c| c.min(n)).collect();
    if points.contains(&0) {
        return Err(Error::Validation("checkpoints must be positive".into()));
    }
    points.sort_unstable();
    points.dedup();

    let snapshots = points
        .into_iter()
        .map(|t| {
            let leaderboard = build_leaderboard(&log.prefix(t), opts)?;
            let anchor = leaderboard.anchor.clone();
            let widths = leaderboard.entries.iter().filter(|e| e.model != anchor).map(|e| e.hi - e.lo).collect();
            Ok(ReplaySnapshot { t, median_width: median(widths), leaderboard })
        })
        .collect::<Result<_>>()?;
    Ok(ReplaySummary { num_records: n, truncated, snapshots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{draw_coefficients, synthesize_battles, SamplingPolicy};

    fn log() -> BattleLog {
        let xi = draw_coefficients(6, 2.0, 4.0, 8).unwrap();
        synthesize_battles(&xi, 8000, &SamplingPolicy::Uniform, 8).unwrap()
    }

    #[test]
    fn full_checkpoint_equals_rank() {
        let log = log();
        let opts = RankOptions::default();
        let r = replay(&log, &[log.len()], &opts).unwrap();
        assert_eq!(r.snapshots.len(), 1);
        assert_eq!(r.snapshots[0].leaderboard, build_leaderboard(&log, &opts).unwrap());
    }

    #[test]
    fn median_width_shrinks() {
        let log = log();
        let r = replay(&log, &[1000, 2000, 4000, 8000], &RankOptions::default()).unwrap();
        for w in r.snapshots.windows(2) {
            assert!(w[1].median_width <= w[0].median_width, "{} then {}", w[0].median_width, w[1].median_width);
        }
        // roughly 1/sqrt(T): eight times the data, under half the width
        let ratio = r.snapshots[3].median_width / r.snapshots[0].median_width;
        assert!(ratio < 0.5 && ratio > 0.25, "{ratio}");
    }

    #[test]
    fn long_checkpoints_truncate() {
        let log = log();
        let r = replay(&log, &[100_000], &RankOptions::default()).unwrap();
        assert_eq!(r.truncated, vec![100_000]);
        assert_eq!(r.snapshots[0].t, log.len());
    }

    #[test]
    fn empty_log_rejected() {
        assert!(replay(&BattleLog::default(), &[1], &RankOptions::default()).is_err());
    }

    #[test]
    fn plot_rows_cover_every_model() {
        let log = log();
        let r = replay(&log, &[4000, 8000], &RankOptions::default()).unwrap();
        assert_eq!(r.plot_rows().len(), 12);
    }
}
