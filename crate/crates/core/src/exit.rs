//! Per-sample exit rule: walk layers `1..=L` and stop at the first `i < L`
//! whose score reaches the threshold, otherwise run to `L`.

use serde::{Deserialize, Serialize};

use crate::env::{LayerOutcome, SampleOutcomes};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which per-layer score is compared against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitCriterion {
    /// `C * (1 - C_g)`.
    #[default]
    UatScore,
    /// `C`.
    RawConfidence,
    /// `1 - C_g`.
    ReliabilityOnly,
}

impl ExitCriterion {
    pub const ALL: [ExitCriterion; 3] = [Self::UatScore, Self::RawConfidence, Self::ReliabilityOnly];

    #[inline]
    pub fn score<F: Real>(self, o: &LayerOutcome<F>) -> F {
        match self {
            Self::UatScore => o.confidence * o.reliability(),
            Self::RawConfidence => o.confidence,
            Self::ReliabilityOnly => o.reliability(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::UatScore => "uat_score",
            Self::RawConfidence => "raw_confidence",
            Self::ReliabilityOnly => "reliability_only",
        }
    }
}

impl std::str::FromStr for ExitCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown exit criterion `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitDecision<F: Real> {
    pub exit_layer: usize,
    pub score_at_exit: F,
    pub early: bool,
    /// Scores of layers `1..=exit_layer`.
    pub per_layer_scores: Vec<F>,
}

fn check_threshold<F: Real>(threshold: F) -> Result<()> {
    if threshold > F::zero() && threshold <= F::one() {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what: "threshold",
            value: threshold.to_f64_lossy(),
        })
    }
}

/// Exit rule over an arbitrary lazily evaluated score. `score(i)` is called
/// for `i = 1, 2, ..` and never beyond the exit layer.
pub fn decide_with<F: Real>(
    num_layers: usize,
    threshold: F,
    mut score: impl FnMut(usize) -> F,
) -> Result<ExitDecision<F>> {
    check_threshold(threshold)?;
    if num_layers == 0 {
        return Err(Error::param("num_layers", "must be at least 1"));
    }
    let mut per_layer_scores = Vec::with_capacity(num_layers);
    for i in 1..=num_layers {
        let s = score(i);
        per_layer_scores.push(s);
        if i < num_layers && s >= threshold {
            return Ok(ExitDecision {
                exit_layer: i,
                score_at_exit: s,
                early: true,
                per_layer_scores,
            });
        }
    }
    Ok(ExitDecision {
        exit_layer: num_layers,
        score_at_exit: per_layer_scores[num_layers - 1],
        early: false,
        per_layer_scores,
    })
}

pub fn decide<F: Real>(
    sample: &SampleOutcomes<F>,
    threshold: F,
    criterion: ExitCriterion,
) -> Result<ExitDecision<F>> {
    decide_with(sample.num_layers(), threshold, |i| criterion.score(sample.layer(i)))
}

/// Exit layer only, without recording the visited scores. `threshold` must be valid.
#[inline]
pub fn exit_layer<F: Real>(sample: &SampleOutcomes<F>, threshold: F, criterion: ExitCriterion) -> usize {
    let layers = sample.layers();
    let last = layers.len() - 1;
    layers[..last]
        .iter()
        .position(|o| criterion.score(o) >= threshold)
        .map_or(last + 1, |k| k + 1)
}

/// Empirical distribution of exit layers; entry `i - 1` is the share exiting at `i`.
pub fn exit_distribution<F: Real>(
    samples: &[SampleOutcomes<F>],
    threshold: F,
    criterion: ExitCriterion,
) -> Result<Vec<F>> {
    check_threshold(threshold)?;
    let first = samples.first().ok_or(Error::Empty("sample set"))?;
    let l = first.num_layers();
    let mut counts = vec![0u64; l];
    for s in samples {
        if s.num_layers() != l {
            return Err(Error::DimensionMismatch {
                expected: l,
                got: s.num_layers(),
            });
        }
        counts[exit_layer(s, threshold, criterion) - 1] += 1;
    }
    let n = F::from_count(samples.len() as u64);
    Ok(counts.into_iter().map(|c| F::from_count(c) / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(conf: &[f64], risk: &[f64]) -> SampleOutcomes<f64> {
        let layers = conf
            .iter()
            .zip(risk)
            .enumerate()
            .map(|(k, (c, r))| LayerOutcome {
                layer: k + 1,
                confidence: *c,
                reliability_risk: *r,
                correct_prob: 0.5,
                realized_correct: true,
                g_features: [*c, 0.0, 0.0],
            })
            .collect();
        SampleOutcomes::new(layers).unwrap()
    }

    fn raw(scores: &[f64]) -> SampleOutcomes<f64> {
        sample(scores, &vec![0.0; scores.len()])
    }

    #[test]
    fn first_crossing() {
        let d = decide(&raw(&[0.3, 0.75, 0.9]), 0.7, ExitCriterion::UatScore).unwrap();
        assert_eq!(d.exit_layer, 2);
        assert!(d.early);
        assert_eq!(d.score_at_exit, 0.75);
        assert_eq!(d.per_layer_scores, vec![0.3, 0.75]);
    }

    #[test]
    fn forced_final() {
        let d = decide(&raw(&[0.3, 0.4, 0.1]), 0.7, ExitCriterion::UatScore).unwrap();
        assert_eq!(d.exit_layer, 3);
        assert!(!d.early);
        assert_eq!(d.score_at_exit, 0.1);
    }

    #[test]
    fn top_threshold_runs_to_the_end() {
        let d = decide(&raw(&[0.99, 0.999, 0.5]), 1.0, ExitCriterion::RawConfidence).unwrap();
        assert_eq!(d.exit_layer, 3);
        // a final-layer score above the threshold does not make the exit early
        let d = decide(&raw(&[0.2, 0.3, 1.0]), 1.0, ExitCriterion::RawConfidence).unwrap();
        assert!(!d.early);
    }

    #[test]
    fn threshold_is_inclusive_and_validated() {
        assert_eq!(decide(&raw(&[0.7, 0.9]), 0.7, ExitCriterion::UatScore).unwrap().exit_layer, 1);
        assert!(decide(&raw(&[0.7, 0.9]), 0.0, ExitCriterion::UatScore).is_err());
        assert!(decide(&raw(&[0.7, 0.9]), 1.01, ExitCriterion::UatScore).is_err());
    }

    #[test]
    fn criteria_pick_their_scores() {
        let s = sample(&[0.9, 0.9], &[0.5, 0.1]);
        assert_eq!(decide(&s, 0.8, ExitCriterion::RawConfidence).unwrap().exit_layer, 1);
        assert_eq!(decide(&s, 0.8, ExitCriterion::UatScore).unwrap().exit_layer, 2);
        assert_eq!(decide(&s, 0.5, ExitCriterion::ReliabilityOnly).unwrap().exit_layer, 1);
        assert_eq!("raw_confidence".parse::<ExitCriterion>().unwrap(), ExitCriterion::RawConfidence);
        assert!("nope".parse::<ExitCriterion>().is_err());
    }

    #[test]
    fn lazy_evaluation() {
        let scores = [0.1, 0.2, 0.8, 0.9, 0.95];
        let mut calls = 0;
        let d = decide_with(5, 0.75, |i| {
            calls += 1;
            scores[i - 1]
        })
        .unwrap();
        assert_eq!(calls, d.exit_layer);
        assert_eq!(calls, 3);
    }

    #[test]
    fn distribution_examples() {
        let all_first = vec![raw(&[0.9, 0.1, 0.1]); 5];
        assert_eq!(exit_distribution(&all_first, 0.6, ExitCriterion::UatScore).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(exit_distribution(&all_first, 1.0, ExitCriterion::UatScore).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(exit_distribution::<f64>(&[], 0.6, ExitCriterion::UatScore).is_err());

        // hand enumeration at tau = 0.6: exits 1, 2, 3, 3
        let four = vec![
            raw(&[0.6, 0.0, 0.0]),
            raw(&[0.59, 0.61, 0.0]),
            raw(&[0.1, 0.2, 0.3]),
            raw(&[0.5, 0.5, 0.99]),
        ];
        let h = exit_distribution(&four, 0.6, ExitCriterion::UatScore).unwrap();
        assert_eq!(h, vec![0.25, 0.25, 0.5]);
    }

    proptest! {
        #[test]
        fn exit_layer_monotone_in_threshold(
            scores in prop::collection::vec(0.0f64..=1.0, 2..16),
            a in 0.01f64..=1.0,
            b in 0.01f64..=1.0,
        ) {
            let s = raw(&scores);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for c in ExitCriterion::ALL {
                let e_lo = decide(&s, lo, c).unwrap().exit_layer;
                let e_hi = decide(&s, hi, c).unwrap().exit_layer;
                prop_assert!(e_lo <= e_hi);
                prop_assert_eq!(exit_layer(&s, hi, c), e_hi);
            }
        }

        #[test]
        fn decision_invariants(scores in prop::collection::vec(0.0f64..=1.0, 2..16), tau in 0.01f64..=1.0) {
            let d = decide(&raw(&scores), tau, ExitCriterion::UatScore).unwrap();
            let l = scores.len();
            prop_assert_eq!(d.early, d.exit_layer < l);
            prop_assert_eq!(d.per_layer_scores.len(), d.exit_layer);
            if d.early {
                prop_assert!(d.score_at_exit >= tau);
            } else {
                prop_assert!(scores[..l - 1].iter().all(|s| *s < tau));
            }
        }
    }
}
