//! UCB threshold selection: rewards, bandit state, and the round loop shared
//! by every policy.

use serde::{Deserialize, Serialize};

use crate::env::{LayerOutcome, ThresholdGrid};
use crate::error::{Error, Result};
use crate::exit::{exit_layer, ExitCriterion};
use crate::scalar::Real;
use crate::sim::SampleSource;

/// Which quantity the reward is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    /// `C * (1 - C_g) - lambda * i`
    #[default]
    Full,
    /// `C`
    ConfidenceOnly,
    /// `C - lambda * i`
    ConfidencePenalized,
    /// `1 - C_g`
    ReliabilityOnly,
    /// `(1 - C_g) - lambda * i`
    ReliabilityPenalized,
    /// `C * (1 - C_g)`
    ProductOnly,
}

impl RewardVariant {
    pub const ALL: [RewardVariant; 6] = [
        Self::Full,
        Self::ConfidenceOnly,
        Self::ConfidencePenalized,
        Self::ReliabilityOnly,
        Self::ReliabilityPenalized,
        Self::ProductOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::ConfidenceOnly => "confidence_only",
            Self::ConfidencePenalized => "confidence_penalized",
            Self::ReliabilityOnly => "reliability_only",
            Self::ReliabilityPenalized => "reliability_penalized",
            Self::ProductOnly => "product_only",
        }
    }

    pub fn penalized(self) -> bool {
        matches!(self, Self::Full | Self::ConfidencePenalized | Self::ReliabilityPenalized)
    }

    /// Exit criterion whose score matches this variant's reward term.
    pub fn natural_criterion(self) -> ExitCriterion {
        match self {
            Self::Full | Self::ProductOnly => ExitCriterion::UatScore,
            Self::ConfidenceOnly | Self::ConfidencePenalized => ExitCriterion::RawConfidence,
            Self::ReliabilityOnly | Self::ReliabilityPenalized => ExitCriterion::ReliabilityOnly,
        }
    }

    /// Unpenalized reward term at an exit.
    #[inline]
    pub fn term<F: Real>(self, o: &LayerOutcome<F>) -> F {
        self.natural_criterion().score(o)
    }
}

impl std::str::FromStr for RewardVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown reward variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct RewardParams<F: Real> {
    pub lambda: F,
    pub num_layers: usize,
    pub variant: RewardVariant,
}

impl<F: Real> RewardParams<F> {
    pub fn new(lambda: F, num_layers: usize, variant: RewardVariant) -> Result<Self> {
        if !(lambda >= F::zero()) || !lambda.is_finite() {
            return Err(Error::param("lambda", format!("{lambda} must be finite and >= 0")));
        }
        if num_layers == 0 {
            return Err(Error::param("num_layers", "must be at least 1"));
        }
        Ok(Self {
            lambda,
            num_layers,
            variant,
        })
    }

    /// Width of the interval full-variant rewards live in, `1 + lambda * L`.
    pub fn reward_range(&self) -> F {
        F::one() + self.lambda * F::from_count(self.num_layers as u64)
    }
}

/// Reward for exiting at `exit_layer` with reward term `term`.
#[inline]
pub fn reward<F: Real>(term: F, exit_layer: usize, params: &RewardParams<F>) -> F {
    if params.variant.penalized() {
        term - params.lambda * F::from_count(exit_layer as u64)
    } else {
        term
    }
}

/// Reward of exiting at outcome `o`.
#[inline]
pub fn reward_at<F: Real>(o: &LayerOutcome<F>, params: &RewardParams<F>) -> F {
    reward(params.variant.term(o), o.layer, params)
}

/// `lambda = epsilon / L`.
pub fn lambda_from_epsilon<F: Real>(epsilon: F, num_layers: usize) -> Result<F> {
    if !(epsilon > F::zero() && epsilon < F::one()) {
        return Err(Error::OutOfRange {
            what: "epsilon",
            value: epsilon.to_f64_lossy(),
        });
    }
    if num_layers == 0 {
        return Err(Error::param("num_layers", "must be at least 1"));
    }
    Ok(epsilon / F::from_count(num_layers as u64))
}

/// `q + gamma * sqrt(ln t / n)`.
pub fn ucb_index<F: Real>(q: F, n: u64, t: u64, gamma: F) -> Result<F> {
    if n == 0 {
        return Err(Error::param("n", "pull count must be at least 1"));
    }
    if t == 0 {
        return Err(Error::param("t", "round must be at least 1"));
    }
    Ok(ucb_index_unchecked(q, n, F::from_count(t).ln(), gamma))
}

#[inline]
fn ucb_index_unchecked<F: Real>(q: F, n: u64, ln_t: F, gamma: F) -> F {
    q + gamma * (ln_t / F::from_count(n)).sqrt()
}

/// Which round count enters the exploration bonus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BonusMode {
    /// Current round `t`.
    #[default]
    Round,
    /// Horizon `T`.
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real", deny_unknown_fields, default)]
pub struct UcbConfig<F: Real> {
    pub gamma: F,
    pub bonus: BonusMode,
}

impl<F: Real> Default for UcbConfig<F> {
    fn default() -> Self {
        Self {
            gamma: F::SQRT_2(),
            bonus: BonusMode::Round,
        }
    }
}

/// Per-arm means and pull counts.
///
/// Each arm's first pull happens in the round-robin phase and sets its count
/// to 1 with `Q` equal to that reward; afterwards `Q` is the running mean of
/// the arm's rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditState<F: Real> {
    q: Vec<F>,
    n: Vec<u64>,
    t: u64,
    gamma: F,
    bonus: BonusMode,
    horizon: u64,
}

impl<F: Real> BanditState<F> {
    pub fn new(num_arms: usize, config: UcbConfig<F>, horizon: u64) -> Result<Self> {
        if num_arms == 0 {
            return Err(Error::Empty("arm set"));
        }
        if !(config.gamma >= F::zero()) || !config.gamma.is_finite() {
            return Err(Error::param("gamma", format!("{} must be finite and >= 0", config.gamma)));
        }
        if config.bonus == BonusMode::Horizon && horizon < 1 {
            return Err(Error::param("horizon", "must be at least 1"));
        }
        Ok(Self {
            q: vec![F::zero(); num_arms],
            n: vec![0; num_arms],
            t: 0,
            gamma: config.gamma,
            bonus: config.bonus,
            horizon,
        })
    }

    pub fn num_arms(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &[F] {
        &self.q
    }

    pub fn n(&self) -> &[u64] {
        &self.n
    }

    /// Rounds completed.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn gamma(&self) -> F {
        self.gamma
    }

    /// Round-robin over the grid for the first `K` rounds, then the arm with
    /// the largest index; ties go to the smaller threshold.
    #[inline]
    pub fn select_arm(&self) -> usize {
        let k = self.q.len();
        if self.t < k as u64 {
            return self.t as usize;
        }
        let t = match self.bonus {
            BonusMode::Round => self.t + 1,
            BonusMode::Horizon => self.horizon,
        };
        let ln_t = F::from_count(t).ln();
        let mut best = 0;
        let mut best_index = ucb_index_unchecked(self.q[0], self.n[0], ln_t, self.gamma);
        for arm in 1..k {
            let index = ucb_index_unchecked(self.q[arm], self.n[arm], ln_t, self.gamma);
            if index > best_index {
                best = arm;
                best_index = index;
            }
        }
        best
    }

    #[inline]
    pub fn update(&mut self, arm: usize, reward: F) {
        self.n[arm] += 1;
        self.q[arm] = self.q[arm] + (reward - self.q[arm]) / F::from_count(self.n[arm]);
        self.t += 1;
    }

    /// [`Self::update`] with the arm validated.
    pub fn try_update(&mut self, arm: usize, reward: F) -> Result<()> {
        if arm >= self.q.len() {
            return Err(Error::UnknownArm {
                arm,
                len: self.q.len(),
            });
        }
        if !reward.is_finite() {
            return Err(Error::NonFinite(format!("reward {reward}")));
        }
        self.update(arm, reward);
        Ok(())
    }
}

/// A threshold-choosing strategy driven by [`play`].
pub trait Policy<F: Real> {
    fn name(&self) -> String;
    /// Arm for the next round; `None` skips early exits entirely.
    fn choose(&mut self) -> Option<usize>;
    fn observe(&mut self, arm: usize, reward: F);
}

/// The UCB threshold selector.
#[derive(Debug, Clone)]
pub struct UcbPolicy<F: Real> {
    pub state: BanditState<F>,
}

impl<F: Real> UcbPolicy<F> {
    pub fn new(num_arms: usize, config: UcbConfig<F>, horizon: u64) -> Result<Self> {
        Ok(Self {
            state: BanditState::new(num_arms, config, horizon)?,
        })
    }
}

impl<F: Real> Policy<F> for UcbPolicy<F> {
    fn name(&self) -> String {
        "uat".into()
    }

    fn choose(&mut self) -> Option<usize> {
        Some(self.state.select_arm())
    }

    fn observe(&mut self, arm: usize, reward: F) {
        self.state.update(arm, reward);
    }
}

/// How a run scores exits and rewards them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec<F: Real> {
    pub reward: RewardParams<F>,
    pub criterion: ExitCriterion,
}

impl<F: Real> RunSpec<F> {
    /// Spec using the variant's own criterion.
    pub fn natural(reward: RewardParams<F>) -> Self {
        Self {
            criterion: reward.variant.natural_criterion(),
            reward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct TraceRow<F: Real> {
    pub round: usize,
    /// `None` when the round ran to the final layer without a threshold.
    pub arm: Option<usize>,
    pub exit_layer: usize,
    /// Criterion score at the exit layer.
    pub score: F,
    pub reward: F,
    pub correct_prob: F,
    pub correct: bool,
    /// `1 - C_g` at the exit layer.
    pub reliability: F,
    pub cum_regret: F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace<F: Real> {
    pub policy: String,
    pub num_layers: usize,
    pub grid: Vec<F>,
    pub rows: Vec<TraceRow<F>>,
}

impl<F: Real> RunTrace<F> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Pulls per grid arm.
    pub fn pulls(&self) -> Vec<u64> {
        let mut n = vec![0; self.grid.len()];
        for r in &self.rows {
            if let Some(a) = r.arm {
                n[a] += 1;
            }
        }
        n
    }
}

/// Runs `policy` over every round of `source`. Cumulative regret is left at
/// zero; see [`crate::metrics::annotate_regret`].
pub fn play<F: Real, P: Policy<F> + ?Sized, S: SampleSource<F> + ?Sized>(
    policy: &mut P,
    grid: &ThresholdGrid<F>,
    source: &S,
    spec: &RunSpec<F>,
) -> Result<RunTrace<F>> {
    let l = source.num_layers();
    if l != spec.reward.num_layers {
        return Err(Error::DimensionMismatch {
            expected: spec.reward.num_layers,
            got: l,
        });
    }
    let t_max = source.num_rounds();
    let mut rows = Vec::with_capacity(t_max);
    for round in 1..=t_max {
        let sample = source.sample(round);
        let arm = policy.choose();
        let exit = match arm {
            Some(a) => {
                let tau = grid.get(a).ok_or(Error::UnknownArm { arm: a, len: grid.len() })?;
                exit_layer(&sample, tau, spec.criterion)
            }
            None => l,
        };
        let o = sample.layer(exit);
        let r = reward_at(o, &spec.reward);
        if let Some(a) = arm {
            policy.observe(a, r);
        }
        rows.push(TraceRow {
            round,
            arm,
            exit_layer: exit,
            score: spec.criterion.score(o),
            reward: r,
            correct_prob: o.correct_prob,
            correct: o.realized_correct,
            reliability: o.reliability(),
            cum_regret: F::zero(),
        });
    }
    Ok(RunTrace {
        policy: policy.name(),
        num_layers: l,
        grid: grid.values().to_vec(),
        rows,
    })
}

/// The UCB selector over the whole of `source`.
pub fn run<F: Real, S: SampleSource<F> + ?Sized>(
    grid: &ThresholdGrid<F>,
    source: &S,
    spec: &RunSpec<F>,
    config: UcbConfig<F>,
) -> Result<(RunTrace<F>, BanditState<F>)> {
    let mut policy = UcbPolicy::new(grid.len(), config, source.num_rounds() as u64)?;
    let trace = play(&mut policy, grid, source, spec)?;
    Ok((trace, policy.state))
}
