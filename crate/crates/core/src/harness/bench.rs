//! Timing of one bandit round (select + update).

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{BanditState, UcbConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub num_arms: usize,
    pub rounds_per_batch: usize,
    pub batches: usize,
    pub median_ns_per_round: f64,
    pub min_ns_per_round: f64,
    pub max_ns_per_round: f64,
}

/// Median over `batches` of the mean time per round within a batch. Rewards are
/// drawn up front so only selection and the update are timed.
pub fn bench_round(num_arms: usize, rounds_per_batch: usize, batches: usize, seed: u64) -> Result<BenchReport> {
    if rounds_per_batch == 0 || batches == 0 {
        return Err(Error::Empty("benchmark batches"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rewards: Vec<f64> = (0..rounds_per_batch * num_arms.max(1)).map(|_| rng.random()).collect();
    let horizon = (rounds_per_batch * batches) as u64;
    let mut state = BanditState::<f64>::new(num_arms, UcbConfig::default(), horizon)?;
    let mut per_round = Vec::with_capacity(batches);
    for _ in 0..batches {
        let start = Instant::now();
        for k in 0..rounds_per_batch {
            let arm = state.select_arm();
            state.update(arm, rewards[k * num_arms + arm]);
        }
        black_box(&state);
        per_round.push(start.elapsed().as_nanos() as f64 / rounds_per_batch as f64);
    }
    per_round.sort_by(f64::total_cmp);
    Ok(BenchReport {
        num_arms,
        rounds_per_batch,
        batches,
        median_ns_per_round: per_round[batches / 2],
        min_ns_per_round: per_round[0],
        max_ns_per_round: per_round[batches - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_is_ordered() {
        let r = bench_round(10, 100, 5, 0).unwrap();
        assert!(r.min_ns_per_round <= r.median_ns_per_round);
        assert!(r.median_ns_per_round <= r.max_ns_per_round);
        assert!(bench_round(10, 0, 5, 0).is_err());
        assert!(bench_round(0, 10, 5, 0).is_err());
    }
}
