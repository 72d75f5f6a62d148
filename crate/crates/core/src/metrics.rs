//! Regret, risk, speedup and the bound evaluators.

use serde::{Deserialize, Serialize};

use crate::bandit::{RunTrace, RunSpec};
use crate::baselines::ArmMeans;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Fills every row's running pseudo-regret `sum_{s <= t} (mu* - mu_{arm_s})`.
/// Rows without an arm count as the final-layer choice.
pub fn annotate_regret<F: Real>(trace: &mut RunTrace<F>, means: &ArmMeans<F>) -> Result<()> {
    let best = means.best_mean();
    let mut acc = F::zero();
    for row in &mut trace.rows {
        acc = acc + (best - means.mean_of(row.arm)?);
        row.cum_regret = acc;
    }
    Ok(())
}

/// `sum_i Delta_i N_i(T)`; `final_pulls` rounds ran to the last layer.
pub fn regret_from_counts<F: Real>(pulls: &[u64], final_pulls: u64, means: &ArmMeans<F>) -> Result<F> {
    if pulls.len() != means.per_arm.len() {
        return Err(Error::DimensionMismatch {
            expected: means.per_arm.len(),
            got: pulls.len(),
        });
    }
    let best = means.best_mean();
    let arms = pulls
        .iter()
        .zip(&means.per_arm)
        .fold(F::zero(), |acc, (n, s)| acc + (best - s.mean_reward) * F::from_count(*n));
    Ok(arms + (best - means.final_layer.mean_reward) * F::from_count(final_pulls))
}

/// Pseudo-regret of a trace against oracle means from the same stream.
///
/// Computed from the trace's pull counts, so it equals
/// `sum_i Delta_i N_i(T)` by construction; the per-round running sum written by
/// [`annotate_regret`] agrees up to summation rounding.
pub fn cumulative_regret<F: Real>(trace: &RunTrace<F>, means: &ArmMeans<F>) -> Result<F> {
    let mut pulls = vec![0u64; means.per_arm.len()];
    let mut final_pulls = 0;
    for row in &trace.rows {
        match row.arm {
            Some(a) => *pulls.get_mut(a).ok_or(Error::UnknownArm { arm: a, len: means.per_arm.len() })? += 1,
            None => final_pulls += 1,
        }
    }
    regret_from_counts(&pulls, final_pulls, means)
}

/// Strictly positive gaps, as they enter the regret bound.
pub fn positive_gaps<F: Real>(means: &ArmMeans<F>) -> Vec<F> {
    means.gaps().into_iter().filter(|g| *g > F::zero()).collect()
}

/// `sum_i (8 ln T / Delta_i + Delta_i)`.
pub fn beta_bound<F: Real>(gaps: &[F], horizon: u64) -> Result<F> {
    if horizon < 2 {
        return Err(Error::param("T", "horizon must be at least 2"));
    }
    beta_bound_ln(gaps, F::from_count(horizon).ln())
}

/// [`beta_bound`] with `ln T` given directly.
pub fn beta_bound_ln<F: Real>(gaps: &[F], ln_t: F) -> Result<F> {
    let eight = F::lit(8.0);
    gaps.iter().try_fold(F::zero(), |acc, d| {
        if *d > F::zero() {
            Ok(acc + eight * ln_t / *d + *d)
        } else {
            Err(Error::OutOfRange {
                what: "gap",
                value: d.to_f64_lossy(),
            })
        }
    })
}

/// `q -/+ range * sqrt(2 ln T / n)`.
pub fn hoeffding_ci<F: Real>(q: F, n: u64, horizon: u64, reward_range: F) -> Result<(F, F)> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    if horizon < 2 {
        return Err(Error::param("T", "horizon must be at least 2"));
    }
    if !(reward_range > F::zero()) {
        return Err(Error::param("reward_range", "must be > 0"));
    }
    let w = reward_range * (F::lit(2.0) * F::from_count(horizon).ln() / F::from_count(n)).sqrt();
    Ok((q - w, q + w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct RiskEstimate<F: Real> {
    /// `1 - mean correct_prob` at the chosen exits.
    pub empirical_risk: F,
    /// `1 - mean realized correctness`.
    pub realized_error_rate: F,
}

pub fn empirical_risk<F: Real>(trace: &RunTrace<F>) -> Result<RiskEstimate<F>> {
    if trace.is_empty() {
        return Err(Error::Empty("trace"));
    }
    let n = F::from_count(trace.len() as u64);
    let p = trace.rows.iter().fold(F::zero(), |acc, r| acc + r.correct_prob);
    let hits = trace.rows.iter().filter(|r| r.correct).count();
    Ok(RiskEstimate {
        empirical_risk: F::one() - p / n,
        realized_error_rate: F::one() - F::from_count(hits as u64) / n,
    })
}

pub fn mean_exit_layer<F: Real>(trace: &RunTrace<F>) -> Result<F> {
    if trace.is_empty() {
        return Err(Error::Empty("trace"));
    }
    let total: u64 = trace.rows.iter().map(|r| r.exit_layer as u64).sum();
    Ok(F::from_count(total) / F::from_count(trace.len() as u64))
}

/// `L / mean exit layer` under a uniform per-layer cost.
pub fn speedup<F: Real>(trace: &RunTrace<F>) -> Result<F> {
    Ok(F::from_count(trace.num_layers as u64) / mean_exit_layer(trace)?)
}

/// Each term of `empirical_risk <= eps* + beta(T) / T + lambda L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct RiskBoundReport<F: Real> {
    pub empirical_risk: F,
    pub epsilon_star: F,
    pub beta_over_t: F,
    pub lambda_l: F,
    pub rhs: F,
    /// `epsilon + eps*` when a tolerance is supplied.
    pub epsilon_d: Option<F>,
    pub holds: bool,
}

pub fn risk_bound_check<F: Real>(
    empirical_risk: F,
    epsilon_star: F,
    beta: F,
    lambda: F,
    num_layers: usize,
    horizon: u64,
    epsilon: Option<F>,
) -> Result<RiskBoundReport<F>> {
    if horizon == 0 {
        return Err(Error::param("T", "must be at least 1"));
    }
    let beta_over_t = beta / F::from_count(horizon);
    let lambda_l = lambda * F::from_count(num_layers as u64);
    let rhs = epsilon_star + beta_over_t + lambda_l;
    Ok(RiskBoundReport {
        empirical_risk,
        epsilon_star,
        beta_over_t,
        lambda_l,
        rhs,
        epsilon_d: epsilon.map(|e| e + epsilon_star),
        holds: empirical_risk <= rhs,
    })
}

/// Share of rounds whose `|(1 - C_g) - correct_prob|` at the exit exceeds `tol`.
pub fn delta1_hat<F: Real>(trace: &RunTrace<F>, tol: F) -> Result<F> {
    if !(tol > F::zero() && tol < F::one()) {
        return Err(Error::OutOfRange {
            what: "calibration tolerance",
            value: tol.to_f64_lossy(),
        });
    }
    if trace.is_empty() {
        return Err(Error::Empty("trace"));
    }
    let miss = trace
        .rows
        .iter()
        .filter(|r| (r.reliability - r.correct_prob).abs() > tol)
        .count();
    Ok(F::from_count(miss as u64) / F::from_count(trace.len() as u64))
}

/// Joint correctness `p(y_hat | x) * p(y = y_hat | x, y_hat)`.
pub fn lemma1_check<F: Real>(confidence: F, correctness_given_pred: F) -> Result<F> {
    for (what, v) in [("confidence", confidence), ("conditional correctness", correctness_given_pred)] {
        if !(v >= F::zero() && v <= F::one()) {
            return Err(Error::OutOfRange {
                what,
                value: v.to_f64_lossy(),
            });
        }
    }
    Ok(confidence * correctness_given_pred)
}

/// Tolerance used for `delta1_hat` unless configured otherwise.
pub const DEFAULT_CALIBRATION_TOL: f64 = 0.2;

/// Run-level numbers, serialized as one flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub num_rounds: usize,
    pub num_layers: usize,
    pub lambda: f64,
    pub cumulative_regret: f64,
    pub regret_per_round: f64,
    pub beta_t: f64,
    pub regret_within_beta: bool,
    pub empirical_risk: f64,
    pub realized_error_rate: f64,
    pub speedup: f64,
    pub mean_exit_layer: f64,
    pub per_arm_pulls: Vec<u64>,
    pub final_layer_pulls: u64,
    pub delta1_hat: f64,
    pub calibration_tol: f64,
    pub oracle_arm: usize,
    pub oracle_threshold: f64,
    pub epsilon_star: f64,
    pub risk_bound_rhs: f64,
    pub risk_bound_holds: bool,
    pub mean_reward: f64,
    pub grid: Vec<f64>,
}

/// Summarises a trace against oracle means from the same stream.
pub fn summarize<F: Real>(
    trace: &RunTrace<F>,
    means: &ArmMeans<F>,
    spec: &RunSpec<F>,
    calibration_tol: F,
) -> Result<RunSummary> {
    let t = trace.len();
    let regret = cumulative_regret(trace, means)?;
    let gaps = positive_gaps(means);
    let beta = if t >= 2 { beta_bound(&gaps, t as u64)? } else { F::zero() };
    let risk = empirical_risk(trace)?;
    let bound = risk_bound_check(
        risk.empirical_risk,
        means.epsilon_star(),
        beta,
        spec.reward.lambda,
        trace.num_layers,
        t as u64,
        None,
    )?;
    let pulls = trace.pulls();
    let final_layer_pulls = t as u64 - pulls.iter().sum::<u64>();
    let mean_reward = trace.rows.iter().fold(F::zero(), |a, r| a + r.reward) / F::from_count(t as u64);
    Ok(RunSummary {
        policy: trace.policy.clone(),
        num_rounds: t,
        num_layers: trace.num_layers,
        lambda: spec.reward.lambda.to_f64_lossy(),
        cumulative_regret: regret.to_f64_lossy(),
        regret_per_round: regret.to_f64_lossy() / t as f64,
        beta_t: beta.to_f64_lossy(),
        regret_within_beta: regret <= beta,
        empirical_risk: risk.empirical_risk.to_f64_lossy(),
        realized_error_rate: risk.realized_error_rate.to_f64_lossy(),
        speedup: speedup(trace)?.to_f64_lossy(),
        mean_exit_layer: mean_exit_layer(trace)?.to_f64_lossy(),
        per_arm_pulls: pulls,
        final_layer_pulls,
        delta1_hat: delta1_hat(trace, calibration_tol)?.to_f64_lossy(),
        calibration_tol: calibration_tol.to_f64_lossy(),
        oracle_arm: means.best,
        oracle_threshold: trace.grid[means.best].to_f64_lossy(),
        epsilon_star: means.epsilon_star().to_f64_lossy(),
        risk_bound_rhs: bound.rhs.to_f64_lossy(),
        risk_bound_holds: bound.holds,
        mean_reward: mean_reward.to_f64_lossy(),
        grid: trace.grid.iter().map(|g| g.to_f64_lossy()).collect(),
    })
}
