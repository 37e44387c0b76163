//! Fixtures shared by the benchmarks.

use prefrank_core::sim::{draw_coefficients, synthesize_battles, SamplingPolicy};
use prefrank_core::BattleLog;

/// Uniformly sampled synthetic battles among `m` models.
pub fn synthetic_log(m: usize, t: usize, seed: u64) -> BattleLog {
    let xi = draw_coefficients(m, 2.0, 4.0, seed).expect("valid coefficient parameters");
    synthesize_battles(&xi, t, &SamplingPolicy::Uniform, seed).expect("valid simulation parameters")
}
