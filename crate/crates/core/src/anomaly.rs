//! Sequential anomalous-voter detection.
//!
//! Each vote is scored by a rank p-value against the historical outcomes of
//! the same pair. Per voter, Fisher's statistic `M_j = -2 Σ_{i≤j} log p_i`
//! is checked at five secret checkpoints `j ∈ [1, 100]` against
//! `χ²_{2j, 1-α/5}`.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dist::chi2_quantile;
use crate::error::{Error, Result};
use crate::model::{BattleLog, Outcome, PairKey};

pub const NUM_CHECKPOINTS: usize = 5;
/// Checkpoints are drawn from `1..=HORIZON`.
pub const HORIZON: usize = 100;

// Outcomes are nonnegative, so their IEEE bit patterns sort like the values.
fn key(x: f64) -> u64 {
    (x + 0.0).to_bits()
}

#[derive(Debug, Clone, Default)]
struct Multiset(BTreeMap<u64, u64>);

impl Multiset {
    fn add(&mut self, x: f64) {
        *self.0.entry(key(x)).or_default() += 1;
    }

    fn at_least(&self, x: f64) -> u64 {
        self.0.range(key(x)..).map(|(_, c)| c).sum()
    }

    fn at_most(&self, x: f64) -> u64 {
        self.0.range(..=key(x)).map(|(_, c)| c).sum()
    }

    fn len(&self) -> u64 {
        self.0.values().sum()
    }
}

/// Historical outcomes per pair from the reference population.
#[derive(Debug, Clone, Default)]
pub struct HistoryPool {
    per_pair: HashMap<PairKey, Multiset>,
}

impl HistoryPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_log(log: &BattleLog) -> Self {
        let mut pool = Self::new();
        for r in log.records() {
            pool.add(r.pair, r.outcome);
        }
        pool
    }

    pub fn add(&mut self, pair: PairKey, outcome: Outcome) {
        self.per_pair.entry(pair).or_default().add(outcome.value());
    }

    pub fn len(&self, pair: PairKey) -> u64 {
        self.per_pair.get(&pair).map_or(0, Multiset::len)
    }

    pub fn count_at_least(&self, pair: PairKey, x: f64) -> u64 {
        self.per_pair.get(&pair).map_or(0, |s| s.at_least(x))
    }

    pub fn count_at_most(&self, pair: PairKey, x: f64) -> u64 {
        self.per_pair.get(&pair).map_or(0, |s| s.at_most(x))
    }
}

/// Direction of the exchangeability test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    /// Small p when the vote is unusually high: counts `h ≥ H'`.
    #[default]
    Upper,
    /// Mirror image: counts `h ≤ H'`.
    Lower,
    /// Bonferroni combination `min(1, 2 min(p_upper, p_lower))`.
    Both,
}

fn rank_pvalue(count: u64, n: u64) -> f64 {
    (1 + count) as f64 / (n + 1) as f64
}

/// `p = (1 + #{h ∈ ℋ_a : h ≥ outcome}) / (|ℋ_a| + 1)`.
pub fn exchangeability_pvalue(pool: &HistoryPool, pair: PairKey, outcome: Outcome) -> f64 {
    rank_pvalue(pool.count_at_least(pair, outcome.value()), pool.len(pair))
}

pub fn sided_pvalue(pool: &HistoryPool, pair: PairKey, outcome: Outcome, sided: Sidedness) -> f64 {
    let n = pool.len(pair);
    let x = outcome.value();
    let upper = || rank_pvalue(pool.count_at_least(pair, x), n);
    let lower = || rank_pvalue(pool.count_at_most(pair, x), n);
    match sided {
        Sidedness::Upper => upper(),
        Sidedness::Lower => lower(),
        Sidedness::Both => (2.0 * upper().min(lower())).min(1.0),
    }
}

/// Fisher's combination statistic `-2 Σ log p_i`.
pub fn fisher_statistic(p_values: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for &p in p_values {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Validation(format!("p-value {p} outside (0, 1]")));
        }
        sum += p.ln();
    }
    Ok(-2.0 * sum)
}

/// Firing threshold at checkpoint `j`: `χ²_{2j, 1 - α/5}`.
pub fn checkpoint_threshold(j: usize, alpha: f64) -> f64 {
    chi2_quantile(1.0 - alpha / NUM_CHECKPOINTS as f64, 2.0 * j as f64)
}

/// Five distinct sorted checkpoints in `1..=100`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CheckpointSchedule([usize; NUM_CHECKPOINTS]);

impl CheckpointSchedule {
    pub fn new(mut checkpoints: [usize; NUM_CHECKPOINTS]) -> Result<Self> {
        checkpoints.sort_unstable();
        let distinct = checkpoints.windows(2).all(|w| w[0] < w[1]);
        if !distinct || checkpoints[0] < 1 || checkpoints[NUM_CHECKPOINTS - 1] > HORIZON {
            return Err(Error::Validation(format!("invalid checkpoints {checkpoints:?}")));
        }
        Ok(Self(checkpoints))
    }

    /// Draw the schedule from a keyed hash of the voter key, so it cannot be
    /// predicted without the secret but is reproducible with it.
    pub fn from_key(secret: &[u8], voter_key: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update((secret.len() as u64).to_le_bytes());
        hasher.update(secret);
        hasher.update(voter_key.as_bytes());
        let seed: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut picks = [0usize; NUM_CHECKPOINTS];
        for (slot, j) in picks.iter_mut().zip(rand::seq::index::sample(&mut rng, HORIZON, NUM_CHECKPOINTS)) {
            *slot = j + 1;
        }
        Self::new(picks).expect("sampled without replacement from 1..=100")
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn last(&self) -> usize {
        self.0[NUM_CHECKPOINTS - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Normal,
    Anomalous,
    Pending,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Normal => "normal",
            Verdict::Anomalous => "anomalous",
            Verdict::Pending => "pending",
        })
    }
}

/// Running test state for one voter.
#[derive(Debug, Clone)]
pub struct VoterLedger {
    pub voter_key: String,
    pub p_values: Vec<f64>,
    /// `(j, M_j)` for every checkpoint reached so far.
    pub fisher_stats: Vec<(usize, f64)>,
    pub checkpoints: CheckpointSchedule,
    pub alpha: f64,
    /// Total votes cast, including those past the horizon.
    pub votes_seen: usize,
    log_sum: f64,
}

impl VoterLedger {
    pub fn new(voter_key: impl Into<String>, checkpoints: CheckpointSchedule, alpha: f64) -> Self {
        Self {
            voter_key: voter_key.into(),
            p_values: Vec::new(),
            fisher_stats: Vec::new(),
            checkpoints,
            alpha,
            votes_seen: 0,
            log_sum: 0.0,
        }
    }

    /// Record the p-value of the voter's next vote.
    pub fn push(&mut self, p: f64) -> Result<()> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Validation(format!("p-value {p} outside (0, 1]")));
        }
        self.votes_seen += 1;
        if self.p_values.len() >= HORIZON {
            return Ok(());
        }
        self.p_values.push(p);
        self.log_sum += p.ln();
        let j = self.p_values.len();
        if self.checkpoints.as_slice().contains(&j) {
            self.fisher_stats.push((j, -2.0 * self.log_sum));
        }
        Ok(())
    }

    /// First checkpoint at which `M_j ≥ χ²_{2j, 1-α/5}`.
    pub fn first_firing(&self) -> Option<usize> {
        self.fisher_stats.iter().find(|&&(j, stat)| stat >= checkpoint_threshold(j, self.alpha)).map(|&(j, _)| j)
    }

    pub fn max_statistic(&self) -> Option<f64> {
        self.fisher_stats.iter().map(|&(_, s)| s).reduce(f64::max)
    }
}

/// Anomalous once any reached checkpoint fires; normal once all checkpoints
/// have passed quietly; pending otherwise.
pub fn evaluate_voter(ledger: &VoterLedger) -> Verdict {
    if ledger.first_firing().is_some() {
        Verdict::Anomalous
    } else if ledger.p_values.len() >= ledger.checkpoints.last() {
        Verdict::Normal
    } else {
        Verdict::Pending
    }
}

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub secret: Vec<u8>,
    pub sidedness: Sidedness,
    /// Score each vote against the pool without the voter's own earlier votes.
    pub exclude_own_votes: bool,
}

impl DetectorConfig {
    pub fn new(secret: impl Into<Vec<u8>>, alpha: f64) -> Self {
        Self { alpha, secret: secret.into(), sidedness: Sidedness::Upper, exclude_own_votes: true }
    }
}

#[derive(Debug, Clone)]
pub struct VoterReport {
    pub ledger: VoterLedger,
    pub verdict: Verdict,
}

/// Replay `log` in time order. Each vote is scored against the pool as it
/// stood when the vote arrived, then joins the pool. Records without a
/// voter key feed the pool but are not evaluated. Reports are sorted by key.
pub fn detect(log: &BattleLog, cfg: &DetectorConfig) -> Result<Vec<VoterReport>> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Validation(format!("alpha {} must lie in (0, 1)", cfg.alpha)));
    }
    let mut pool = HistoryPool::new();
    let mut own: HashMap<&str, HistoryPool> = HashMap::new();
    let mut ledgers: BTreeMap<&str, VoterLedger> = BTreeMap::new();

    for r in log.records() {
        if let Some(voter) = r.voter_key.as_deref() {
            let ledger = ledgers.entry(voter).or_insert_with(|| {
                VoterLedger::new(voter, CheckpointSchedule::from_key(&cfg.secret, voter), cfg.alpha)
            });
            if ledger.p_values.len() < HORIZON {
                let mine: &HistoryPool = own.entry(voter).or_default();
                let x = r.outcome.value();
                let excluded = |count: &dyn Fn(&HistoryPool) -> u64| {
                    if cfg.exclude_own_votes {
                        count(&pool) - count(mine)
                    } else {
                        count(&pool)
                    }
                };
                let n = excluded(&|p| p.len(r.pair));
                let upper = rank_pvalue(excluded(&|p| p.count_at_least(r.pair, x)), n);
                let lower = rank_pvalue(excluded(&|p| p.count_at_most(r.pair, x)), n);
                let p = match cfg.sidedness {
                    Sidedness::Upper => upper,
                    Sidedness::Lower => lower,
                    Sidedness::Both => (2.0 * upper.min(lower)).min(1.0),
                };
                ledger.push(p)?;
            } else {
                ledger.votes_seen += 1;
            }
            own.entry(voter).or_default().add(r.pair, r.outcome);
        }
        pool.add(r.pair, r.outcome);
    }

    Ok(ledgers
        .into_values()
        .map(|ledger| {
            let verdict = evaluate_voter(&ledger);
            VoterReport { ledger, verdict }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> PairKey {
        PairKey::new(0, 1).unwrap()
    }

    fn pool_of(values: &[f64]) -> HistoryPool {
        let mut pool = HistoryPool::new();
        for &v in values {
            pool.add(pair(), Outcome::new(v).unwrap());
        }
        pool
    }

    #[test]
    fn pvalue_examples() {
        assert_eq!(exchangeability_pvalue(&HistoryPool::new(), pair(), Outcome::SECOND), 1.0);
        assert_eq!(exchangeability_pvalue(&pool_of(&[0.0, 1.0, 1.0]), pair(), Outcome::SECOND), 0.75);
        assert_eq!(exchangeability_pvalue(&pool_of(&[1.0, 1.0, 1.0]), pair(), Outcome::FIRST), 1.0);
        // ties compare with ≥ as written
        assert_eq!(exchangeability_pvalue(&pool_of(&[0.5, 0.0, 1.0]), pair(), Outcome::TIE), 0.75);
    }

    #[test]
    fn mirrored_and_two_sided() {
        let pool = pool_of(&[0.0, 1.0, 1.0]);
        assert_eq!(sided_pvalue(&pool, pair(), Outcome::FIRST, Sidedness::Lower), 0.5);
        assert_eq!(sided_pvalue(&pool, pair(), Outcome::FIRST, Sidedness::Both), 1.0);
    }

    #[test]
    fn fisher_examples() {
        assert_eq!(fisher_statistic(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert!((fisher_statistic(&[0.5, 0.5]).unwrap() - 2.772588722239781).abs() < 1e-12);
        assert!((fisher_statistic(&[0.1]).unwrap() - 4.605170185988091).abs() < 1e-12);
        assert!(fisher_statistic(&[0.5, 0.0]).is_err());
    }

    #[test]
    fn threshold_example() {
        // α = 0.1, j = 2 → χ²_{4, 0.98}
        assert!((checkpoint_threshold(2, 0.1) - 11.667843403834778).abs() < 1e-9);
        let stat = fisher_statistic(&[0.5, 0.5]).unwrap();
        assert!(stat < checkpoint_threshold(2, 0.1));
    }

    #[test]
    fn consistently_small_pvalues_fire() {
        let schedule = CheckpointSchedule::new([3, 10, 20, 40, 50]).unwrap();
        let mut ledger = VoterLedger::new("v", schedule, 0.1);
        for _ in 0..50 {
            ledger.push(0.02).unwrap();
        }
        assert_eq!(evaluate_voter(&ledger), Verdict::Anomalous);
        // every reached checkpoint has M_j = 7.824 j
        for &(j, stat) in &ledger.fisher_stats {
            assert!((stat - 7.824046010856292 * j as f64).abs() < 1e-9);
            assert!(stat >= checkpoint_threshold(j, 0.1));
        }
    }

    #[test]
    fn unit_pvalues_are_normal_at_horizon() {
        let schedule = CheckpointSchedule::from_key(b"k", "voter");
        let mut ledger = VoterLedger::new("voter", schedule, 0.1);
        for i in 0..HORIZON {
            if i + 1 < schedule.last() {
                assert_eq!(evaluate_voter(&ledger), Verdict::Pending);
            }
            ledger.push(1.0).unwrap();
        }
        assert_eq!(evaluate_voter(&ledger), Verdict::Normal);
        assert_eq!(ledger.max_statistic(), Some(0.0));
    }

    #[test]
    fn schedules_are_keyed_and_valid() {
        let a = CheckpointSchedule::from_key(b"secret", "alice");
        assert_eq!(a, CheckpointSchedule::from_key(b"secret", "alice"));
        assert_ne!(a, CheckpointSchedule::from_key(b"other", "alice"));
        let s = a.as_slice();
        assert!(s.windows(2).all(|w| w[0] < w[1]) && s[0] >= 1 && s[4] <= HORIZON);
        assert!(CheckpointSchedule::new([1, 1, 2, 3, 4]).is_err());
        assert!(CheckpointSchedule::new([0, 1, 2, 3, 4]).is_err());
    }
}
