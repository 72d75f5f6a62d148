//! Online early-exit threshold selection.
//!
//! An upper-confidence-bound bandit picks one global exit threshold per
//! incoming sample from a fixed grid. Each sample walks the exits of an
//! early-exit network and leaves at the first layer whose score
//! `confidence * (1 - risk)` reaches the threshold; the bandit is rewarded
//! with that score minus a per-layer cost. No labels are needed online.
//!
//! The crate also ships the pieces needed to study the method without a real
//! network: a synthetic early-exit simulator ([`sim`]), the reliability head
//! that produces the risk score ([`reliability`]), baseline policies and an
//! offline oracle ([`baselines`]), regret and risk metrics ([`metrics`]) and an
//! experiment harness ([`harness`]).
//!
//! Core math is generic over [`Real`] (`f32` or `f64`); the aliases below fix
//! the common choices.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bandit;
pub mod baselines;
pub mod env;
pub mod error;
pub mod exit;
pub mod harness;
pub mod metrics;
pub mod reliability;
pub mod scalar;
pub mod sim;

pub use bandit::{
    lambda_from_epsilon, play, reward, reward_at, run, ucb_index, BanditState, BonusMode, Policy,
    RewardParams, RewardVariant, RunSpec, RunTrace, TraceRow, UcbConfig, UcbPolicy,
};
pub use baselines::{oracle_best_arm, ArmMeans, FinalLayerPolicy, FixedPolicy, RandomPolicy, ReplayStats};
pub use env::{default_grid, LayerOutcome, SampleOutcomes, ShiftSchedule, ThresholdGrid, G_FEATURES};
pub use error::{Error, Result};
pub use exit::{decide, decide_with, exit_distribution, ExitCriterion, ExitDecision};
pub use metrics::RunSummary;
pub use reliability::{CoverageTargets, ReliabilityModel};
pub use scalar::Real;
pub use sim::{GeneratorParams, SampleSource, SyntheticStream};

pub type Grid = ThresholdGrid<f64>;
pub type Outcome = LayerOutcome<f64>;
pub type Sample = SampleOutcomes<f64>;
pub type Bandit = BanditState<f64>;
pub type Trace = RunTrace<f64>;
pub type Reliability = ReliabilityModel<f64>;
pub type Stream = SyntheticStream<f64>;

pub type Grid32 = ThresholdGrid<f32>;
pub type Sample32 = SampleOutcomes<f32>;
pub type Bandit32 = BanditState<f32>;
pub type Reliability32 = ReliabilityModel<f32>;
