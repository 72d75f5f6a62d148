//! Shared domain vocabulary: threshold grids, per-layer outcomes, samples and
//! shift schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Number of reliability features emitted per layer:
/// `(confidence, layer / L, noisy correctness signal)`.
pub const G_FEATURES: usize = 3;

/// Ordered set of candidate exit thresholds (the bandit's arms).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<F>", into = "Vec<F>", bound = "F: Real")]
pub struct ThresholdGrid<F: Real> {
    values: Vec<F>,
}

impl<F: Real> ThresholdGrid<F> {
    /// Builds a grid, requiring a non-empty, strictly increasing sequence in (0, 1].
    pub fn new(values: Vec<F>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidGrid("grid must contain at least one threshold".into()));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || *v <= F::zero() || *v > F::one() {
                return Err(Error::InvalidGrid(format!(
                    "threshold #{i} = {v} is outside (0, 1]"
                )));
            }
        }
        if let Some(i) = values.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "thresholds must be strictly increasing (#{} = {} then #{} = {})",
                i,
                values[i],
                i + 1,
                values[i + 1]
            )));
        }
        Ok(Self { values })
    }

    /// `count` equally spaced thresholds ending at `upper`.
    ///
    /// With `include_lower` the grid spans `[lower, upper]` (step `(upper-lower)/(count-1)`);
    /// otherwise it spans `(lower, upper]` (step `(upper-lower)/count`).
    pub fn equally_spaced(lower: F, upper: F, count: usize, include_lower: bool) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidGrid("count must be at least 1".into()));
        }
        if !(lower < upper) && count > 1 {
            return Err(Error::InvalidGrid(format!("lower {lower} must be below upper {upper}")));
        }
        let values = if count == 1 {
            vec![upper]
        } else if include_lower {
            let span = upper - lower;
            let steps = F::from_count(count as u64 - 1);
            (0..count)
                .map(|k| lower + span * F::from_count(k as u64) / steps)
                .collect()
        } else {
            let span = upper - lower;
            let steps = F::from_count(count as u64);
            (1..=count)
                .map(|k| lower + span * F::from_count(k as u64) / steps)
                .collect()
        };
        Self::new(values)
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Threshold of arm `arm`.
    pub fn get(&self, arm: usize) -> Option<F> {
        self.values.get(arm).copied()
    }

    pub fn min(&self) -> F {
        self.values[0]
    }

    pub fn max(&self) -> F {
        self.values[self.values.len() - 1]
    }

    /// Index of the arm whose threshold equals `tau` up to `1e-9`.
    pub fn arm_of(&self, tau: F) -> Option<usize> {
        let tol = F::lit(1e-9);
        self.values.iter().position(|v| (*v - tau).abs() <= tol)
    }
}

impl<F: Real> TryFrom<Vec<F>> for ThresholdGrid<F> {
    type Error = Error;

    fn try_from(values: Vec<F>) -> Result<Self> {
        Self::new(values)
    }
}

impl<F: Real> From<ThresholdGrid<F>> for Vec<F> {
    fn from(grid: ThresholdGrid<F>) -> Self {
        grid.values
    }
}

/// Ten equally spaced thresholds over `[0.5, 1.0]`, both endpoints included.
pub fn default_grid<F: Real>() -> ThresholdGrid<F> {
    ThresholdGrid::equally_spaced(F::lit(0.5), F::one(), 10, true)
        .expect("default grid is valid")
}

/// Exit-relevant quantities observed for one sample at one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct LayerOutcome<F: Real> {
    /// 1-based layer index.
    pub layer: usize,
    /// Max-class probability `C_i`.
    pub confidence: F,
    /// Risk score `C_g^i = 1 - g(.)`.
    pub reliability_risk: F,
    /// Probability that the predicted label is the true one, known to the simulator.
    pub correct_prob: F,
    /// Bernoulli draw of `correct_prob`, fixed at generation time.
    pub realized_correct: bool,
    pub g_features: [F; G_FEATURES],
}

impl<F: Real> LayerOutcome<F> {
    /// `1 - C_g`, the reliability the exit score multiplies in.
    #[inline]
    pub fn reliability(&self) -> F {
        F::one() - self.reliability_risk
    }

    /// Cross-entropy of the exit's prediction against the realized label:
    /// `-ln p` if the prediction was right, `-ln (1 - p)` if wrong, with
    /// `p = correct_prob` clamped away from 0 and 1.
    pub fn cross_entropy(&self) -> F {
        let eps = F::lit(1e-6);
        let p = self.correct_prob.max(eps).min(F::one() - eps);
        if self.realized_correct {
            -p.ln()
        } else {
            -(F::one() - p).ln()
        }
    }
}

/// One sample's outcomes across layers `1..=L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct SampleOutcomes<F: Real> {
    per_layer: Vec<LayerOutcome<F>>,
}

impl<F: Real> SampleOutcomes<F> {
    /// Requires layers numbered `1..=L` in order, all probabilities in `[0, 1]`.
    pub fn new(per_layer: Vec<LayerOutcome<F>>) -> Result<Self> {
        if per_layer.is_empty() {
            return Err(Error::Empty("sample has no layers"));
        }
        for (k, o) in per_layer.iter().enumerate() {
            if o.layer != k + 1 {
                return Err(Error::param(
                    "layer",
                    format!("expected layer {} at position {k}, found {}", k + 1, o.layer),
                ));
            }
            for (name, v) in [
                ("confidence", o.confidence),
                ("reliability_risk", o.reliability_risk),
                ("correct_prob", o.correct_prob),
            ] {
                if !(v >= F::zero() && v <= F::one()) {
                    return Err(Error::param(name, format!("{v} at layer {} not in [0, 1]", o.layer)));
                }
            }
        }
        Ok(Self { per_layer })
    }

    pub(crate) fn from_parts_unchecked(per_layer: Vec<LayerOutcome<F>>) -> Self {
        debug_assert!(Self::new(per_layer.clone()).is_ok());
        Self { per_layer }
    }

    pub fn num_layers(&self) -> usize {
        self.per_layer.len()
    }

    /// Outcome at 1-based `layer`.
    ///
    /// # Panics
    /// If `layer` is 0 or exceeds `num_layers()`.
    #[inline]
    pub fn layer(&self, layer: usize) -> &LayerOutcome<F> {
        &self.per_layer[layer - 1]
    }

    pub fn layers(&self) -> &[LayerOutcome<F>] {
        &self.per_layer
    }

    pub fn final_layer(&self) -> &LayerOutcome<F> {
        &self.per_layer[self.per_layer.len() - 1]
    }

    pub fn final_label_correct_prob(&self) -> F {
        self.final_layer().correct_prob
    }

    /// Overwrites every layer's risk score using `risk(outcome)`, which must return a value in `[0, 1]`.
    pub fn set_reliability_risk(&mut self, mut risk: impl FnMut(&LayerOutcome<F>) -> F) {
        for o in &mut self.per_layer {
            o.reliability_risk = risk(o).clamp01();
        }
    }
}

/// Piecewise-constant schedule of generator parameters over rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, P)>", into = "Vec<(usize, P)>")]
#[serde(bound(serialize = "P: Clone + Serialize", deserialize = "P: Deserialize<'de>"))]
pub struct ShiftSchedule<P> {
    segments: Vec<(usize, P)>,
}

impl<P> ShiftSchedule<P> {
    /// Segments must start at round 1 and have strictly increasing start rounds.
    pub fn new(segments: Vec<(usize, P)>) -> Result<Self> {
        match segments.first() {
            None => return Err(Error::Empty("shift schedule has no segments")),
            Some((start, _)) if *start != 1 => {
                return Err(Error::param(
                    "start_round",
                    format!("first segment must start at round 1, not {start}"),
                ))
            }
            _ => {}
        }
        if let Some(w) = segments.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(Error::param(
                "start_round",
                format!("start rounds must increase strictly ({} then {})", w[0].0, w[1].0),
            ));
        }
        Ok(Self { segments })
    }

    pub fn constant(params: P) -> Self {
        Self {
            segments: vec![(1, params)],
        }
    }

    pub fn segments(&self) -> &[(usize, P)] {
        &self.segments
    }

    /// Parameters of the last segment starting at or before `round` (1-based).
    pub fn active_params(&self, round: usize) -> &P {
        let idx = self.segments.partition_point(|(start, _)| *start <= round);
        // round 0 is a precondition violation; fall back to the first segment.
        &self.segments[idx.saturating_sub(1)].1
    }
}

impl<P> TryFrom<Vec<(usize, P)>> for ShiftSchedule<P> {
    type Error = Error;

    fn try_from(segments: Vec<(usize, P)>) -> Result<Self> {
        Self::new(segments)
    }
}

impl<P: Clone> From<ShiftSchedule<P>> for Vec<(usize, P)> {
    fn from(s: ShiftSchedule<P>) -> Self {
        s.segments
    }
}

/// Free-function form of [`ShiftSchedule::active_params`].
pub fn active_params<P>(schedule: &ShiftSchedule<P>, round: usize) -> &P {
    schedule.active_params(round)
}
