use rayon::prelude::*;
use serde::Serialize;

use super::{draw_coefficients, mean_and_se, synthesize_battles, SimConfig};
use crate::bt::{
    approximate_ranks, bootstrap_intervals, fit_bt, marginal_intervals, simultaneous_set, true_ranks, BtFit,
    FitOptions, ScoreIntervals,
};
use crate::error::Result;
use crate::seeds::derive_seed;

/// Outcome of one simulated trial. Coverage flags and widths cover the free
/// (non-anchor) coordinates only; the anchor interval is degenerate.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub true_xi: Vec<f64>,
    pub fit: BtFit,
    pub covered: Vec<bool>,
    pub widths: Vec<f64>,
    /// Every free coordinate inside the simultaneous box at once.
    pub simultaneous_covered: bool,
    /// Some true rank falls outside `[rank_lower, rank_upper]` of the simultaneous set.
    pub rank_violation: bool,
    pub bootstrap_covered: Option<Vec<bool>>,
    pub bootstrap_widths: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageSummary {
    pub m: usize,
    pub t: usize,
    pub trials: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub scale: f64,
    pub seed: u64,
    pub coverage: f64,
    pub coverage_se: f64,
    pub mean_width: f64,
    pub mean_width_se: f64,
    pub simultaneous_coverage: f64,
    pub rank_violation_rate: f64,
    pub bootstrap_coverage: Option<f64>,
    pub bootstrap_coverage_se: Option<f64>,
    pub bootstrap_mean_width: Option<f64>,
    /// Mean over trials and models of `|w_boot - w_sandwich| / w_sandwich`.
    pub bootstrap_relative_width_gap: Option<f64>,
}

fn covered_flags(iv: &ScoreIntervals, truth: &[f64]) -> Vec<bool> {
    (1..iv.models.len()).map(|p| iv.covers(p, truth[p])).collect()
}

/// Run trial `index` of `cfg`: fresh coefficients, fresh battles, one fit.
pub fn run_trial(cfg: &SimConfig, index: usize) -> Result<TrialResult> {
    cfg.validate()?;
    let seed = derive_seed(cfg.seed, "trial", index as u64);
    let xi = draw_coefficients(cfg.m, cfg.gamma, cfg.scale, seed)?;
    let log = synthesize_battles(&xi, cfg.t, &cfg.sampling, seed)?;
    let opts = FitOptions::with_ridge(cfg.ridge);
    let fit = fit_bt(&log, &opts)?;
    // align truth with the fitted models; the fit anchors its first model at 0
    let anchor = xi[fit.anchor()];
    let truth: Vec<f64> = fit.models.iter().map(|&m| xi[m] - anchor).collect();

    let marginal = marginal_intervals(&fit, cfg.alpha);
    let simultaneous = simultaneous_set(&fit, &fit.sandwich_cov, cfg.alpha)?;
    let covered = covered_flags(&marginal, &truth);
    let widths = marginal.widths()[1..].to_vec();
    let simultaneous_covered = covered_flags(&simultaneous, &truth).iter().all(|&c| c);
    let ranks = approximate_ranks(&simultaneous);
    let truth_ranks = true_ranks(&truth);
    let rank_violation = ranks.entries.iter().zip(&truth_ranks).any(|(e, &r)| r < e.rank_lower || r > e.rank_upper);

    let (bootstrap_covered, bootstrap_widths) = match cfg.bootstrap_reps {
        Some(reps) => {
            let boot = bootstrap_intervals(&log, &opts, reps, cfg.alpha, derive_seed(seed, "bootstrap", 0))?;
            (Some(covered_flags(&boot.intervals, &truth)), Some(boot.intervals.widths()[1..].to_vec()))
        }
        None => (None, None),
    };

    Ok(TrialResult {
        true_xi: truth,
        fit,
        covered,
        widths,
        simultaneous_covered,
        rank_violation,
        bootstrap_covered,
        bootstrap_widths,
    })
}

fn fraction(flags: &[bool]) -> f64 {
    flags.iter().filter(|&&c| c).count() as f64 / flags.len().max(1) as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Coverage and width of sandwich intervals (and optionally bootstrap
/// intervals) over `cfg.trials` independent trials. Standard errors are
/// across trials.
pub fn run_coverage_experiment(cfg: &SimConfig) -> Result<CoverageSummary> {
    cfg.validate()?;
    let trials: Vec<TrialResult> = (0..cfg.trials).into_par_iter().map(|i| run_trial(cfg, i)).collect::<Result<_>>()?;
    Ok(summarize(cfg, &trials))
}

fn summarize(cfg: &SimConfig, trials: &[TrialResult]) -> CoverageSummary {
    let n = trials.len() as f64;
    let (coverage, coverage_se) = mean_and_se(trials.iter().map(|t| fraction(&t.covered)));
    let (mean_width, mean_width_se) = mean_and_se(trials.iter().map(|t| mean(&t.widths)));
    let simultaneous_coverage = trials.iter().filter(|t| t.simultaneous_covered).count() as f64 / n;
    let rank_violation_rate = trials.iter().filter(|t| t.rank_violation).count() as f64 / n;

    let boot = cfg.bootstrap_reps.map(|_| {
        let (cov, se) = mean_and_se(trials.iter().map(|t| fraction(t.bootstrap_covered.as_deref().unwrap_or(&[]))));
        let width =
            mean(&trials.iter().map(|t| mean(t.bootstrap_widths.as_deref().unwrap_or(&[]))).collect::<Vec<_>>());
        let gap = mean(
            &trials
                .iter()
                .map(|t| {
                    let bw = t.bootstrap_widths.as_deref().unwrap_or(&[]);
                    mean(&bw.iter().zip(&t.widths).map(|(b, s)| (b - s).abs() / s).collect::<Vec<_>>())
                })
                .collect::<Vec<_>>(),
        );
        (cov, se, width, gap)
    });

    CoverageSummary {
        m: cfg.m,
        t: cfg.t,
        trials: trials.len(),
        alpha: cfg.alpha,
        gamma: cfg.gamma,
        scale: cfg.scale,
        seed: cfg.seed,
        coverage,
        coverage_se,
        mean_width,
        mean_width_se,
        simultaneous_coverage,
        rank_violation_rate,
        bootstrap_coverage: boot.map(|b| b.0),
        bootstrap_coverage_se: boot.map(|b| b.1),
        bootstrap_mean_width: boot.map(|b| b.2),
        bootstrap_relative_width_gap: boot.map(|b| b.3),
    }
}

/// One coverage summary per model count, all other settings shared.
pub fn coverage_sweep(base: &SimConfig, ms: &[usize]) -> Result<Vec<CoverageSummary>> {
    ms.iter().map(|&m| run_coverage_experiment(&SimConfig { m, ..base.clone() })).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(m: usize, trials: usize) -> SimConfig {
        SimConfig { m, t: 3000, trials, seed: 4, ..SimConfig::default() }
    }

    #[test]
    fn single_trial_summary_is_that_trial() {
        let cfg = small(5, 1);
        let summary = run_coverage_experiment(&cfg).unwrap();
        let trial = run_trial(&cfg, 0).unwrap();
        assert_eq!(summary.coverage, fraction(&trial.covered));
        assert_eq!(summary.mean_width, mean(&trial.widths));
        assert_eq!(summary.coverage_se, 0.0);
        assert_eq!(summary.rank_violation_rate, if trial.rank_violation { 1.0 } else { 0.0 });
    }

    #[test]
    fn parallel_matches_serial() {
        let cfg = small(4, 6);
        let serial: Vec<_> = (0..6).map(|i| run_trial(&cfg, i).unwrap()).collect();
        assert_eq!(summarize(&cfg, &serial), run_coverage_experiment(&cfg).unwrap());
    }

    #[test]
    fn wider_with_more_models() {
        let five = run_coverage_experiment(&small(5, 10)).unwrap();
        let twenty = run_coverage_experiment(&small(20, 10)).unwrap();
        assert!(twenty.mean_width > five.mean_width, "{} vs {}", twenty.mean_width, five.mean_width);
    }

    #[test]
    fn sweep_keeps_order() {
        let s = coverage_sweep(&small(3, 2), &[3, 4]).unwrap();
        assert_eq!(s.iter().map(|c| c.m).collect::<Vec<_>>(), vec![3, 4]);
    }
}
