#![allow(dead_code)]

use prefrank_core::model::{canonicalize, num_pairs};
use prefrank_core::{BattleLog, BattleRecord, ModelRegistry, Outcome};

pub fn registry(m: usize) -> ModelRegistry {
    ModelRegistry::from_ids((0..m).map(|i| format!("m{i}"))).unwrap()
}

/// A record in which `winner` beats `loser`, served uniformly over all pairs.
pub fn win(m: usize, t: u64, winner: usize, loser: usize) -> BattleRecord {
    record(m, t, loser, winner, 1.0, 1.0 / num_pairs(m) as f64)
}

/// `outcome` is the probability mass on `b` beating `a`.
pub fn record(_m: usize, t: u64, a: usize, b: usize, outcome: f64, prob: f64) -> BattleRecord {
    let (pair, outcome) = canonicalize(a, b, Outcome::new(outcome).unwrap()).unwrap();
    BattleRecord { time_index: t, pair, outcome, sample_prob: prob, voter_key: None, timestamp: None }
}

pub fn log_of(m: usize, records: Vec<BattleRecord>) -> BattleLog {
    BattleLog::new(registry(m), records).unwrap()
}
