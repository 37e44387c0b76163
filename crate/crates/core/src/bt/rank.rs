use serde::Serialize;

use super::ScoreIntervals;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankEntry {
    pub model: usize,
    pub score: f64,
    pub lo: f64,
    pub hi: f64,
    /// Best rank consistent with the intervals: `1 + #{m' : lo_m' > hi_m}`.
    /// With simultaneous coverage, no model's true rank is better than this.
    pub rank_lower: usize,
    /// Worst rank consistent with the intervals: `1 + #{m' ≠ m : hi_m' > lo_m}`.
    /// With simultaneous coverage, no model's true rank is worse than this.
    pub rank_upper: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingReport {
    pub entries: Vec<RankEntry>,
    pub alpha: f64,
    pub simultaneous: bool,
}

/// Approximate ranks from a set of score intervals.
pub fn approximate_ranks(intervals: &ScoreIntervals) -> RankingReport {
    let n = intervals.models.len();
    let entries = (0..n)
        .map(|m| {
            let (lo_m, hi_m) = (intervals.lo[m], intervals.hi[m]);
            let above = (0..n).filter(|&o| intervals.lo[o] > hi_m).count();
            let maybe_above = (0..n).filter(|&o| o != m && intervals.hi[o] > lo_m).count();
            RankEntry {
                model: intervals.models[m],
                score: intervals.point[m],
                lo: lo_m,
                hi: hi_m,
                rank_lower: 1 + above,
                rank_upper: 1 + maybe_above,
            }
        })
        .collect();
    RankingReport { entries, alpha: intervals.alpha, simultaneous: intervals.simultaneous }
}

/// Exact ranks of a score vector: `1 + #{m' : s_m' > s_m}`; ties share a rank.
pub fn true_ranks(scores: &[f64]) -> Vec<usize> {
    scores.iter().map(|s| 1 + scores.iter().filter(|o| *o > s).count()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::IntervalMethod;
    use proptest::prelude::*;

    fn boxes(bounds: &[(f64, f64)]) -> ScoreIntervals {
        ScoreIntervals {
            models: (0..bounds.len()).collect(),
            point: bounds.iter().map(|(l, h)| 0.5 * (l + h)).collect(),
            lo: bounds.iter().map(|b| b.0).collect(),
            hi: bounds.iter().map(|b| b.1).collect(),
            simultaneous: true,
            alpha: 0.05,
            method: IntervalMethod::Sandwich,
        }
    }

    #[test]
    fn disjoint_intervals_rank_exactly() {
        let r = approximate_ranks(&boxes(&[(4.0, 5.0), (2.0, 3.0), (0.0, 1.0)]));
        let lower: Vec<_> = r.entries.iter().map(|e| e.rank_lower).collect();
        let upper: Vec<_> = r.entries.iter().map(|e| e.rank_upper).collect();
        assert_eq!(lower, vec![1, 2, 3]);
        assert_eq!(upper, vec![1, 2, 3]);
    }

    #[test]
    fn identical_intervals_tie_at_one() {
        let r = approximate_ranks(&boxes(&[(0.0, 1.0); 3]));
        assert!(r.entries.iter().all(|e| e.rank_lower == 1 && e.rank_upper == 3));
    }

    proptest! {
        #[test]
        fn ranks_match_double_loop(raw in prop::collection::vec((-3.0f64..3.0, 0.0f64..2.0), 8)) {
            let bounds: Vec<(f64, f64)> = raw.iter().map(|&(c, w)| (c - w / 2.0, c + w / 2.0)).collect();
            let r = approximate_ranks(&boxes(&bounds));
            for (m, e) in r.entries.iter().enumerate() {
                let mut lower = 1;
                let mut upper = 1;
                for (o, b) in bounds.iter().enumerate() {
                    if b.0 > bounds[m].1 { lower += 1; }
                    if o != m && b.1 > bounds[m].0 { upper += 1; }
                }
                prop_assert_eq!(e.rank_lower, lower);
                prop_assert_eq!(e.rank_upper, upper);
                prop_assert!(1 <= e.rank_lower && e.rank_lower <= e.rank_upper && e.rank_upper <= 8);
            }
        }

        #[test]
        fn covering_intervals_bracket_true_ranks(
            scores in prop::collection::vec(-3.0f64..3.0, 2..8),
            slack in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 8),
        ) {
            let bounds: Vec<(f64, f64)> = scores.iter().zip(&slack).map(|(s, (a, b))| (s - a, s + b)).collect();
            let r = approximate_ranks(&boxes(&bounds));
            for (e, t) in r.entries.iter().zip(true_ranks(&scores)) {
                prop_assert!(e.rank_lower <= t && t <= e.rank_upper);
            }
        }
    }
}
