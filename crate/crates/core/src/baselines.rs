//! Reference policies and the offline best-arm oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{reward_at, Policy, RunSpec};
use crate::env::ThresholdGrid;
use crate::error::{Error, Result};
use crate::exit::exit_layer;
use crate::scalar::Real;
use crate::sim::SampleSource;

/// Always the same threshold.
#[derive(Debug, Clone)]
pub struct FixedPolicy<F: Real> {
    arm: usize,
    tau: F,
}

impl<F: Real> FixedPolicy<F> {
    /// `tau` must be one of the grid's thresholds.
    pub fn new(grid: &ThresholdGrid<F>, tau: F) -> Result<Self> {
        let arm = grid.arm_of(tau).ok_or(Error::OutOfRange {
            what: "fixed threshold (not on the grid)",
            value: tau.to_f64_lossy(),
        })?;
        Ok(Self { arm, tau })
    }

    pub fn from_arm(grid: &ThresholdGrid<F>, arm: usize) -> Result<Self> {
        let tau = grid.get(arm).ok_or(Error::UnknownArm { arm, len: grid.len() })?;
        Ok(Self { arm, tau })
    }

    pub fn arm(&self) -> usize {
        self.arm
    }
}

impl<F: Real> Policy<F> for FixedPolicy<F> {
    fn name(&self) -> String {
        format!("fixed-{:.4}", self.tau)
    }

    fn choose(&mut self) -> Option<usize> {
        Some(self.arm)
    }

    fn observe(&mut self, _arm: usize, _reward: F) {}
}

/// Uniformly random threshold every round.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    num_arms: usize,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(num_arms: usize, seed: u64) -> Result<Self> {
        if num_arms == 0 {
            return Err(Error::Empty("arm set"));
        }
        Ok(Self {
            num_arms,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl<F: Real> Policy<F> for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn choose(&mut self) -> Option<usize> {
        Some(self.rng.random_range(0..self.num_arms))
    }

    fn observe(&mut self, _arm: usize, _reward: F) {}
}

/// Every sample runs through all layers.
#[derive(Debug, Clone, Copy, Default)]
pub struct FinalLayerPolicy;

impl<F: Real> Policy<F> for FinalLayerPolicy {
    fn name(&self) -> String {
        "final".into()
    }

    fn choose(&mut self) -> Option<usize> {
        None
    }

    fn observe(&mut self, _arm: usize, _reward: F) {}
}

/// Replay statistics of one fixed choice over a whole stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct ReplayStats<F: Real> {
    pub mean_reward: F,
    /// `1 - mean correct_prob` at the exit.
    pub risk: F,
    pub mean_exit_layer: F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct ArmMeans<F: Real> {
    pub per_arm: Vec<ReplayStats<F>>,
    pub final_layer: ReplayStats<F>,
    /// Arm with the largest mean reward (smallest threshold on ties).
    pub best: usize,
}

impl<F: Real> ArmMeans<F> {
    pub fn best_mean(&self) -> F {
        self.per_arm[self.best].mean_reward
    }

    pub fn means(&self) -> Vec<F> {
        self.per_arm.iter().map(|s| s.mean_reward).collect()
    }

    /// Mean reward of a trace row's choice; `None` is the final layer.
    pub fn mean_of(&self, arm: Option<usize>) -> Result<F> {
        match arm {
            Some(a) => self
                .per_arm
                .get(a)
                .map(|s| s.mean_reward)
                .ok_or(Error::UnknownArm { arm: a, len: self.per_arm.len() }),
            None => Ok(self.final_layer.mean_reward),
        }
    }

    /// `mu* - mu_i` for every arm.
    pub fn gaps(&self) -> Vec<F> {
        let best = self.best_mean();
        self.per_arm.iter().map(|s| best - s.mean_reward).collect()
    }

    /// Best arm other than the optimum.
    pub fn runner_up(&self) -> Option<usize> {
        (0..self.per_arm.len())
            .filter(|&a| a != self.best)
            .fold(None, |acc: Option<usize>, a| match acc {
                Some(b) if self.per_arm[b].mean_reward >= self.per_arm[a].mean_reward => Some(b),
                _ => Some(a),
            })
    }

    /// Oracle arm's risk, used as the optimal-arm risk `eps*`.
    pub fn epsilon_star(&self) -> F {
        self.per_arm[self.best].risk
    }
}

/// Replays every arm (and the final layer) over all of `source`.
pub fn oracle_best_arm<F: Real, S: SampleSource<F> + ?Sized>(
    grid: &ThresholdGrid<F>,
    source: &S,
    spec: &RunSpec<F>,
) -> Result<ArmMeans<F>> {
    let l = source.num_layers();
    if l != spec.reward.num_layers {
        return Err(Error::DimensionMismatch {
            expected: spec.reward.num_layers,
            got: l,
        });
    }
    let t_max = source.num_rounds();
    if t_max == 0 {
        return Err(Error::Empty("stream"));
    }
    let k = grid.len();
    // (reward, correct_prob, exit layer) sums; index k is the final layer
    let mut sums = vec![(F::zero(), F::zero(), 0u64); k + 1];
    for round in 1..=t_max {
        let sample = source.sample(round);
        for (arm, tau) in grid.values().iter().enumerate() {
            let e = exit_layer(&sample, *tau, spec.criterion);
            let o = sample.layer(e);
            let s = &mut sums[arm];
            s.0 = s.0 + reward_at(o, &spec.reward);
            s.1 = s.1 + o.correct_prob;
            s.2 += e as u64;
        }
        let o = sample.final_layer();
        let s = &mut sums[k];
        s.0 = s.0 + reward_at(o, &spec.reward);
        s.1 = s.1 + o.correct_prob;
        s.2 += l as u64;
    }
    let n = F::from_count(t_max as u64);
    let stats: Vec<ReplayStats<F>> = sums
        .into_iter()
        .map(|(r, p, e)| ReplayStats {
            mean_reward: r / n,
            risk: F::one() - p / n,
            mean_exit_layer: F::from_count(e) / n,
        })
        .collect();
    let mut best = 0;
    for a in 1..k {
        if stats[a].mean_reward > stats[best].mean_reward {
            best = a;
        }
    }
    Ok(ArmMeans {
        final_layer: stats[k],
        per_arm: stats[..k].to_vec(),
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::{play, RewardParams, RewardVariant};
    use crate::env::{default_grid, LayerOutcome, SampleOutcomes};

    fn sample(conf: &[f64]) -> SampleOutcomes<f64> {
        SampleOutcomes::new(
            conf.iter()
                .enumerate()
                .map(|(k, c)| LayerOutcome {
                    layer: k + 1,
                    confidence: *c,
                    reliability_risk: 0.0,
                    correct_prob: *c,
                    realized_correct: true,
                    g_features: [*c, 0.0, 0.0],
                })
                .collect(),
        )
        .unwrap()
    }

    fn spec(lambda: f64, l: usize) -> RunSpec<f64> {
        RunSpec::natural(RewardParams::new(lambda, l, RewardVariant::Full).unwrap())
    }

    #[test]
    fn fixed_policy_is_constant_and_checked() {
        let g = default_grid::<f64>();
        let mut p = FixedPolicy::new(&g, 1.0).unwrap();
        assert_eq!(p.arm(), 9);
        assert!((0..5).all(|_| Policy::<f64>::choose(&mut p) == Some(9)));
        assert!(FixedPolicy::new(&g, 0.73).is_err());
    }

    #[test]
    fn random_policy_is_seeded_and_uniform() {
        let mut a = RandomPolicy::new(10, 3).unwrap();
        let mut b = RandomPolicy::new(10, 3).unwrap();
        let mut counts = [0u32; 10];
        for _ in 0..100_000 {
            let x = Policy::<f64>::choose(&mut a).unwrap();
            assert_eq!(Some(x), Policy::<f64>::choose(&mut b));
            counts[x] += 1;
        }
        for c in counts {
            assert!((f64::from(c) / 1e5 - 0.1).abs() < 0.01);
        }
        let mut one = RandomPolicy::new(1, 9).unwrap();
        assert!((0..10).all(|_| Policy::<f64>::choose(&mut one) == Some(0)));
    }

    #[test]
    fn final_layer_policy_exits_last() {
        let s = vec![sample(&[0.99, 0.99, 0.5]); 4];
        let t = play(&mut FinalLayerPolicy, &default_grid(), &s, &spec(0.01, 3)).unwrap();
        assert!(t.rows.iter().all(|r| r.exit_layer == 3 && r.arm.is_none()));
    }

    #[test]
    fn one_arm_grid() {
        let g = ThresholdGrid::new(vec![0.8]).unwrap();
        let s = vec![sample(&[0.9, 0.95])];
        assert_eq!(oracle_best_arm(&g, &s, &spec(0.0, 2)).unwrap().best, 0);
    }

    #[test]
    fn heavy_penalty_prefers_lowest_threshold() {
        // easy samples, confidence grows slowly with depth
        let s: Vec<_> = (0..50)
            .map(|k| sample(&[0.6 + 0.002 * k as f64, 0.7, 0.8, 0.9, 0.95, 1.0]))
            .collect();
        let m = oracle_best_arm(&default_grid(), &s, &spec(0.2, 6)).unwrap();
        assert_eq!(m.best, 0);
        for w in m.per_arm.windows(2) {
            assert!(w[0].mean_reward >= w[1].mean_reward);
        }
    }

    #[test]
    fn ties_pick_the_smaller_threshold() {
        let s = vec![sample(&[0.99, 0.99])];
        let m = oracle_best_arm(&default_grid(), &s, &spec(0.0, 2)).unwrap();
        assert_eq!(m.best, 0);
        assert_eq!(m.runner_up(), Some(1));
    }
}
