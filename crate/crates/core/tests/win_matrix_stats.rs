mod common;

use common::{log_of, record};
use prefrank_core::model::all_pairs;
use prefrank_core::win_matrix::estimate_win_matrix;
use prefrank_core::BattleRecord;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const M: usize = 4;

fn true_theta() -> Vec<f64> {
    vec![0.3, 0.55, 0.8, 0.5, 0.65, 0.2]
}

/// Rounds drawn from a fixed non-uniform pair distribution with Bernoulli
/// outcomes.
fn draw_log(probs: &[f64], theta: &[f64], t: usize, rng: &mut ChaCha8Rng) -> Vec<BattleRecord> {
    let pairs = all_pairs(M);
    let pick = WeightedIndex::new(probs).unwrap();
    (0..t)
        .map(|i| {
            let k = pick.sample(rng);
            let h = if rng.random::<f64>() < theta[k] { 1.0 } else { 0.0 };
            record(M, i as u64, pairs[k].first(), pairs[k].second(), h, probs[k])
        })
        .collect()
}

#[test]
fn ipw_estimate_is_unbiased() {
    let probs = [0.05, 0.1, 0.15, 0.2, 0.2, 0.3];
    let theta = true_theta();
    let reps = 600;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sum = [0.0; 6];
    let mut sum2 = [0.0; 6];
    for _ in 0..reps {
        let est = estimate_win_matrix(&log_of(M, draw_log(&probs, &theta, 200, &mut rng)), 0.05).unwrap();
        for k in 0..6 {
            sum[k] += est.theta_hat[k];
            sum2[k] += est.theta_hat[k] * est.theta_hat[k];
        }
    }
    for k in 0..6 {
        let mean = sum[k] / reps as f64;
        let var = sum2[k] / reps as f64 - mean * mean;
        let se = (var / reps as f64).sqrt();
        assert!((mean - theta[k]).abs() <= 3.0 * se, "pair {k}: mean {mean}, truth {}, se {se}", theta[k]);
    }
}

#[test]
fn single_pair_estimate_recovers_win_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let t = 37;
    let p = 0.25;
    let records: Vec<BattleRecord> =
        (0..t).map(|i| record(2, i as u64, 0, 1, if rng.random::<f64>() < 0.6 { 1.0 } else { 0.0 }, p)).collect();
    let wins: f64 = records.iter().map(|r| r.outcome.value()).sum();
    let est = estimate_win_matrix(&log_of(2, records), 0.05).unwrap();
    assert!((est.theta_hat[0] * p * t as f64 - wins).abs() < 1e-12);
}

#[test]
fn per_entry_intervals_cover_at_nominal_rate() {
    let probs = vec![1.0 / 6.0; 6];
    let theta = true_theta();
    let trials = 300;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut hits = 0usize;
    let mut total = 0usize;
    for _ in 0..trials {
        let est = estimate_win_matrix(&log_of(M, draw_log(&probs, &theta, 1_200, &mut rng)), 0.05).unwrap();
        for (k, p) in all_pairs(M).into_iter().enumerate() {
            assert!(est.n_obs[k] >= 100, "pair {p:?} saw only {} votes", est.n_obs[k]);
            let iv = est.interval(p);
            total += 1;
            if iv.lo <= theta[k] && theta[k] <= iv.hi {
                hits += 1;
            }
        }
    }
    let coverage = hits as f64 / total as f64;
    assert!((0.91..=0.985).contains(&coverage), "coverage {coverage}");
}
