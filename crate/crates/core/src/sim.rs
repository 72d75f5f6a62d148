//! Synthetic early-exit network.
//!
//! Each sample gets a latent difficulty `d ~ N(0, difficulty_spread)`, shifted
//! upward by `confidence_noise * |z|` to model input corruption. At layer `i`
//! of `L` the probability that the exit's prediction is right is
//!
//! ```text
//! correct_prob_i = logistic(depth_gain * i / L - d)
//! ```
//!
//! and the realized correctness is a Bernoulli draw of it, independent across
//! layers. Confidence is `correct_prob_i + N(0, confidence_noise)` for a right
//! prediction; a wrong one keeps roughly half of that mass
//! (`0.5 * correct_prob_i + noise`) and never exceeds `0.5 + correct_prob_i / 2`.
//! Both are clamped to `[0, 1]`.
//!
//! Since confidence is drawn after the outcome, `correct_prob` is the chance of
//! being right before looking at the exit; rules that pick exits by confidence
//! end up with fewer realized errors than `1 - correct_prob` suggests.
//!
//! With probability `overconfidence_rate` one layer with index `< L/2` is
//! corrupted: its prediction is wrong, `correct_prob` drops to a quarter of its
//! value and confidence is drawn from `U(0.7, 1.0)`.
//!
//! Reliability features are `(confidence, i / L, s * correct_prob + N(0, 1 - s))`
//! with `s = reliability_signal`.
//!
//! # Random streams
//!
//! Round `t` of a stream reads ChaCha8 stream number `t` keyed by the stream
//! seed mixed with `GeneratorParams::seed`. Within a round, the first
//! [`SAMPLE_WORDS`] 32-bit words drive sample-level draws and layer `i` reads
//! the [`LAYER_WORDS`] words starting at `SAMPLE_WORDS + (i - 1) * LAYER_WORDS`.
//! Every draw uses a fixed number of words, so each (round, layer) pair owns a
//! fixed slice of the keystream.

use std::borrow::Cow;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{LayerOutcome, SampleOutcomes, ShiftSchedule, G_FEATURES};
use crate::error::{Error, Result};
use crate::reliability::ReliabilityModel;
use crate::scalar::Real;

/// Version tag of the generator's keystream layout.
pub const GENERATOR_VERSION: u32 = 1;
/// 32-bit words consumed by sample-level draws.
pub const SAMPLE_WORDS: u64 = 10;
/// 32-bit words consumed per layer.
pub const LAYER_WORDS: u64 = 6;

/// Smallest confidence given to an injected confidently-wrong exit.
pub const OVERCONFIDENT_MIN: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorParams {
    pub num_layers: usize,
    pub difficulty_spread: f64,
    pub depth_gain: f64,
    pub overconfidence_rate: f64,
    pub confidence_noise: f64,
    pub reliability_signal: f64,
    pub seed: u64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            num_layers: 12,
            difficulty_spread: 1.0,
            depth_gain: 6.0,
            overconfidence_rate: 0.12,
            confidence_noise: 0.25,
            reliability_signal: 0.8,
            seed: 0,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 2 {
            return Err(Error::param("num_layers", format!("{} < 2", self.num_layers)));
        }
        if !(self.difficulty_spread > 0.0 && self.difficulty_spread.is_finite()) {
            return Err(Error::param("difficulty_spread", format!("{} must be > 0", self.difficulty_spread)));
        }
        if !(self.depth_gain > 0.0) || self.depth_gain.is_nan() {
            return Err(Error::param("depth_gain", format!("{} must be > 0", self.depth_gain)));
        }
        if !(0.0..=1.0).contains(&self.overconfidence_rate) {
            return Err(Error::param(
                "overconfidence_rate",
                format!("{} not in [0, 1]", self.overconfidence_rate),
            ));
        }
        if self.overconfidence_rate > 0.0 && self.shallow_layers() == 0 {
            return Err(Error::param(
                "overconfidence_rate",
                format!("needs a layer below L/2, but L = {}", self.num_layers),
            ));
        }
        if !(self.confidence_noise >= 0.0 && self.confidence_noise.is_finite()) {
            return Err(Error::param("confidence_noise", format!("{} must be >= 0", self.confidence_noise)));
        }
        if !(0.0..=1.0).contains(&self.reliability_signal) {
            return Err(Error::param(
                "reliability_signal",
                format!("{} not in [0, 1]", self.reliability_signal),
            ));
        }
        Ok(())
    }

    /// Number of layers with index `< L/2`.
    pub fn shallow_layers(&self) -> usize {
        self.num_layers.div_ceil(2) - 1
    }
}

/// Uniform in `[0, 1)` from two keystream words.
#[inline]
fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Two independent standard normals (Box-Muller, four words).
#[inline]
fn normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1 = 1.0 - uniform(rng);
    let u2 = uniform(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

#[inline]
fn logistic(z: f64) -> f64 {
    z.sigmoid()
}

fn mix_seed(seed: u64, params_seed: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed ^ params_seed.rotate_left(32) ^ 0x9E37_79B9_7F4A_7C15;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG positioned at the start of `round`'s keystream.
pub fn round_rng(params: &GeneratorParams, seed: u64, round: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, params.seed));
    rng.set_stream(round);
    rng
}

/// Draws one sample's outcomes. `params` must be valid.
///
/// Risk scores are initialised to `0.5` (an untrained reliability head);
/// use [`SampleOutcomes::set_reliability_risk`] or a [`SyntheticStream`] with a
/// scorer to attach a trained head.
pub fn generate_sample<F: Real>(params: &GeneratorParams, rng: &mut ChaCha8Rng) -> SampleOutcomes<F> {
    let l = params.num_layers;
    let sigma = params.confidence_noise;
    let signal = params.reliability_signal;

    // sample-level: 10 words
    let (z0, z1) = normal_pair(rng);
    let inject_u = uniform(rng);
    let layer_u = uniform(rng);
    let conf_u = uniform(rng);
    let difficulty = params.difficulty_spread * z0 + sigma * z1.abs();
    let shallow = params.shallow_layers();
    let injected = if inject_u < params.overconfidence_rate && shallow > 0 {
        Some(1 + ((layer_u * shallow as f64) as usize).min(shallow - 1))
    } else {
        None
    };

    let per_layer = (1..=l)
        .map(|i| {
            // per-layer: 6 words
            let correct_u = uniform(rng);
            let (e_conf, e_feat) = normal_pair(rng);
            let depth = i as f64 / l as f64;
            let mut p = logistic(params.depth_gain * depth - difficulty);
            let mut correct = correct_u < p;
            let mut conf = if correct {
                (p + sigma * e_conf).clamp(0.0, 1.0)
            } else {
                (0.5 * p + sigma * e_conf).clamp(0.0, 1.0).min(0.5 + 0.5 * p)
            };
            if injected == Some(i) {
                p *= 0.25;
                correct = false;
                conf = OVERCONFIDENT_MIN + (1.0 - OVERCONFIDENT_MIN) * conf_u;
            }
            let noisy = signal * p + (1.0 - signal) * e_feat;
            let g_features: [F; G_FEATURES] = [F::lit(conf), F::lit(depth), F::lit(noisy)];
            LayerOutcome {
                layer: i,
                confidence: F::lit(conf),
                reliability_risk: F::lit(0.5),
                correct_prob: F::lit(p),
                realized_correct: correct,
                g_features,
            }
        })
        .collect();
    SampleOutcomes::from_parts_unchecked(per_layer)
}

/// Anything that can hand out the sample for a (1-based) round.
pub trait SampleSource<F: Real>: Sync {
    fn num_layers(&self) -> usize;
    fn num_rounds(&self) -> usize;
    fn sample(&self, round: usize) -> Cow<'_, SampleOutcomes<F>>;
}

impl<F: Real> SampleSource<F> for [SampleOutcomes<F>] {
    fn num_layers(&self) -> usize {
        self.first().map_or(0, SampleOutcomes::num_layers)
    }

    fn num_rounds(&self) -> usize {
        self.len()
    }

    fn sample(&self, round: usize) -> Cow<'_, SampleOutcomes<F>> {
        Cow::Borrowed(&self[round - 1])
    }
}

impl<F: Real> SampleSource<F> for Vec<SampleOutcomes<F>> {
    fn num_layers(&self) -> usize {
        self.as_slice().num_layers()
    }

    fn num_rounds(&self) -> usize {
        self.len()
    }

    fn sample(&self, round: usize) -> Cow<'_, SampleOutcomes<F>> {
        Cow::Borrowed(&self[round - 1])
    }
}

/// Lazily generated stream: round `t` is a pure function of
/// `(schedule, seed, t)` plus the optional reliability scorer.
#[derive(Debug, Clone)]
pub struct SyntheticStream<F: Real> {
    schedule: ShiftSchedule<GeneratorParams>,
    num_rounds: usize,
    seed: u64,
    scorer: Option<ReliabilityModel<F>>,
    order: Option<Vec<u32>>,
}

impl<F: Real> SyntheticStream<F> {
    pub fn new(schedule: ShiftSchedule<GeneratorParams>, num_rounds: usize, seed: u64) -> Result<Self> {
        if num_rounds == 0 {
            return Err(Error::param("num_rounds", "must be at least 1"));
        }
        let layers = schedule.segments()[0].1.num_layers;
        for (_, p) in schedule.segments() {
            p.validate()?;
            if p.num_layers != layers {
                return Err(Error::param(
                    "num_layers",
                    format!("all segments must share L ({} vs {})", layers, p.num_layers),
                ));
            }
        }
        Ok(Self {
            schedule,
            num_rounds,
            seed,
            scorer: None,
            order: None,
        })
    }

    /// Attaches a reliability head; every emitted layer gets `C_g = 1 - g(.)`.
    pub fn with_scorer(mut self, model: ReliabilityModel<F>) -> Result<Self> {
        if model.feature_dim() != G_FEATURES {
            return Err(Error::DimensionMismatch {
                expected: G_FEATURES,
                got: model.feature_dim(),
            });
        }
        self.scorer = Some(model);
        Ok(self)
    }

    /// Presents the same pool of samples in a seeded random order.
    pub fn reshuffled(mut self, shuffle_seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut order: Vec<u32> = (1..=self.num_rounds as u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        order.shuffle(&mut rng);
        self.order = Some(order);
        self
    }

    pub fn schedule(&self) -> &ShiftSchedule<GeneratorParams> {
        &self.schedule
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scorer(&self) -> Option<&ReliabilityModel<F>> {
        self.scorer.as_ref()
    }

    /// Generates the pool sample with index `index` (1-based), ignoring any reshuffle.
    pub fn generate(&self, index: usize) -> SampleOutcomes<F> {
        let params = self.schedule.active_params(index);
        let mut rng = round_rng(params, self.seed, index as u64);
        let mut sample = generate_sample(params, &mut rng);
        if let Some(model) = &self.scorer {
            let l = sample.num_layers();
            sample.set_reliability_risk(|o| F::one() - model.score_unchecked(&o.g_features, o.layer, l));
        }
        sample
    }

    /// Materialises the whole stream.
    pub fn collect(&self) -> Vec<SampleOutcomes<F>> {
        (1..=self.num_rounds).map(|t| self.sample(t).into_owned()).collect()
    }
}

impl<F: Real> SampleSource<F> for SyntheticStream<F> {
    fn num_layers(&self) -> usize {
        self.schedule.segments()[0].1.num_layers
    }

    fn num_rounds(&self) -> usize {
        self.num_rounds
    }

    fn sample(&self, round: usize) -> Cow<'_, SampleOutcomes<F>> {
        let index = match &self.order {
            Some(order) => order[round - 1] as usize,
            None => round,
        };
        Cow::Owned(self.generate(index))
    }
}

/// Generates `num_rounds` samples; round `t` uses `schedule.active_params(t)`.
pub fn stream<F: Real>(
    schedule: &ShiftSchedule<GeneratorParams>,
    num_rounds: usize,
    seed: u64,
) -> Result<Vec<SampleOutcomes<F>>> {
    Ok(SyntheticStream::new(schedule.clone(), num_rounds, seed)?.collect())
}
