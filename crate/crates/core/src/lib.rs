//! Statistical ranking of models from pairwise human preference battles.
//!
//! The pipeline runs from a battle log through an inverse-probability-weighted
//! win matrix or a reweighted Bradley-Terry fit to score intervals and
//! approximate ranks. Around it sit an active pair sampler, a per-voter
//! anomaly detector and a simulation lab.

pub mod anomaly;
pub mod bt;
pub mod dist;
pub mod error;
pub mod leaderboard;
pub mod model;
pub mod np_bt;
pub mod sampler;
pub mod seeds;
pub mod sim;
pub mod win_matrix;

pub use anomaly::{Verdict, VoterLedger};
pub use bt::{BtFit, RankingReport, ScoreIntervals};
pub use error::{Error, Result};
pub use leaderboard::{Leaderboard, RankOptions};
pub use model::{BattleLog, BattleRecord, ModelId, ModelRegistry, Outcome, PairKey};
pub use win_matrix::WinMatrixEstimate;
