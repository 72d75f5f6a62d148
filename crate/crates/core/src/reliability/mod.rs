//! Reliability head `g`: one linear layer plus sigmoid shared by every exit.
//!
//! The head reads an exit's reliability features together with its relative
//! depth, and its output `g` in (0, 1) says how far the exit's confidence can
//! be trusted. The exit engine consumes the risk score `C_g = 1 - g`.

mod joint;
mod loss;
mod train;

pub use joint::{compare_joint_training, JointComparison, JointTaskParams};
pub use loss::{
    aggregate_loss, hinge_sq, objective, per_exit_loss, Objective, DEFAULT_SHARPNESS,
};
pub use train::{calibrate_logit, train, ExitBatch, TrainHyperparams, TrainedHead, TrainingSet};

use serde::{Deserialize, Serialize};

use crate::env::{LayerOutcome, SampleOutcomes};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Serialization format version of [`ReliabilityModel`].
pub const MODEL_VERSION: u32 = 1;

/// Weights laid out as `[feature weights.., layer weight, bias]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct ReliabilityModel<F: Real> {
    version: u32,
    num_layers: usize,
    weights: Vec<F>,
}

impl<F: Real> ReliabilityModel<F> {
    /// All-zero model: scores exactly 0.5 everywhere.
    pub fn zeros(feature_dim: usize, num_layers: usize) -> Self {
        Self {
            version: MODEL_VERSION,
            num_layers,
            weights: vec![F::zero(); feature_dim + 2],
        }
    }

    pub fn from_weights(weights: Vec<F>, num_layers: usize) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: weights.len(),
            });
        }
        if num_layers == 0 {
            return Err(Error::param("num_layers", "must be at least 1"));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::NonFinite(format!("reliability weight {w}")));
        }
        Ok(Self {
            version: MODEL_VERSION,
            num_layers,
            weights,
        })
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.len() - 2
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    /// Linear form `w . [features, layer / L, 1]`.
    #[inline]
    pub fn logit_unchecked(&self, features: &[F], layer: usize, num_layers: usize) -> F {
        let d = self.feature_dim();
        let mut z = self.weights[d + 1];
        for (w, x) in self.weights[..d].iter().zip(features) {
            z = z + *w * *x;
        }
        z + self.weights[d] * F::from_count(layer as u64) / F::from_count(num_layers as u64)
    }

    #[inline]
    pub(crate) fn score_unchecked(&self, features: &[F], layer: usize, num_layers: usize) -> F {
        self.logit_unchecked(features, layer, num_layers).sigmoid()
    }

    /// `g(features, layer)`: sigmoid of the linear form, in (0, 1).
    pub fn score(&self, features: &[F], layer: usize) -> Result<F> {
        if features.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                got: features.len(),
            });
        }
        if layer == 0 || layer > self.num_layers {
            return Err(Error::OutOfRange {
                what: "layer",
                value: layer as f64,
            });
        }
        Ok(self.score_unchecked(features, layer, self.num_layers))
    }

    /// Score of a simulated exit.
    pub fn score_outcome(&self, outcome: &LayerOutcome<F>) -> Result<F> {
        self.score(&outcome.g_features, outcome.layer)
    }

    /// Attaches `C_g = 1 - g` to every layer of `sample`.
    pub fn annotate(&self, sample: &mut SampleOutcomes<F>) -> Result<()> {
        if sample.num_layers() != self.num_layers {
            return Err(Error::DimensionMismatch {
                expected: self.num_layers,
                got: sample.num_layers(),
            });
        }
        let l = self.num_layers;
        sample.set_reliability_risk(|o| F::one() - self.score_unchecked(&o.g_features, o.layer, l));
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.version != MODEL_VERSION {
            return Err(Error::param(
                "version",
                format!("unsupported model version {} (expected {MODEL_VERSION})", m.version),
            ));
        }
        Self::from_weights(m.weights, m.num_layers)
    }
}

/// Per-exit coverage targets `c_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct CoverageTargets<F: Real> {
    c_per_exit: Vec<F>,
}

impl<F: Real> CoverageTargets<F> {
    pub fn new(c_per_exit: Vec<F>) -> Result<Self> {
        if let Some(c) = c_per_exit.iter().find(|c| !(**c >= F::zero() && **c <= F::one())) {
            return Err(Error::OutOfRange {
                what: "coverage target",
                value: c.to_f64_lossy(),
            });
        }
        Ok(Self { c_per_exit })
    }

    /// Same target at every exit.
    pub fn uniform(c: F, num_layers: usize) -> Result<Self> {
        Self::new(vec![c; num_layers])
    }

    pub fn zeros(num_layers: usize) -> Self {
        Self {
            c_per_exit: vec![F::zero(); num_layers],
        }
    }

    pub fn values(&self) -> &[F] {
        &self.c_per_exit
    }

    pub fn len(&self) -> usize {
        self.c_per_exit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c_per_exit.is_empty()
    }

    pub fn min(&self) -> F {
        self.c_per_exit.iter().copied().fold(F::infinity(), F::min)
    }
}

/// `c_i` = fraction of validation samples whose exit `i` is correct.
///
/// Each entry of `validation` holds one sample's correctness flags for exits `1..=L`.
pub fn compute_c<F: Real, S: AsRef<[bool]>>(validation: &[S]) -> Result<CoverageTargets<F>> {
    let first = validation.first().ok_or(Error::Empty("validation set"))?;
    let l = first.as_ref().len();
    let mut hits = vec![0u64; l];
    for flags in validation {
        let flags = flags.as_ref();
        if flags.len() != l {
            return Err(Error::DimensionMismatch {
                expected: l,
                got: flags.len(),
            });
        }
        for (h, f) in hits.iter_mut().zip(flags) {
            *h += u64::from(*f);
        }
    }
    let n = F::from_count(validation.len() as u64);
    CoverageTargets::new(hits.into_iter().map(|h| F::from_count(h) / n).collect())
}

/// [`compute_c`] over simulated samples' realized correctness.
pub fn compute_c_from_samples<F: Real>(samples: &[SampleOutcomes<F>]) -> Result<CoverageTargets<F>> {
    let flags: Vec<Vec<bool>> = samples
        .iter()
        .map(|s| s.layers().iter().map(|o| o.realized_correct).collect())
        .collect();
    compute_c(&flags)
}

/// Fraction of scores marked reliable (`g >= 0.5`).
pub fn coverage_of_scores<F: Real>(scores: &[F]) -> Result<F> {
    if scores.is_empty() {
        return Err(Error::Empty("coverage batch"));
    }
    let half = F::lit(0.5);
    let covered = scores.iter().filter(|g| **g >= half).count();
    Ok(F::from_count(covered as u64) / F::from_count(scores.len() as u64))
}

/// Area under the ROC curve of `scores` against `labels` (ties count half).
pub fn auc<F: Real>(scores: &[F], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let pos = labels.iter().filter(|y| **y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Empty("AUC needs both classes"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|a, b| scores[*a].partial_cmp(&scores[*b]).unwrap_or(std::cmp::Ordering::Equal));
    // rank sum of positives with average ranks over ties
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < idx.len() {
        let mut j = k;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[k]] {
            j += 1;
        }
        let avg = (k + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[k..=j].iter().filter(|i| labels[**i]).count() as f64;
        k = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Fraction of `batch` the model marks reliable.
pub fn coverage<F: Real>(model: &ReliabilityModel<F>, batch: &[LayerOutcome<F>]) -> Result<F> {
    let scores = batch
        .iter()
        .map(|o| model.score_outcome(o))
        .collect::<Result<Vec<_>>>()?;
    coverage_of_scores(&scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(layer: usize, f: [f64; 3]) -> LayerOutcome<f64> {
        LayerOutcome {
            layer,
            confidence: f[0],
            reliability_risk: 0.5,
            correct_prob: 0.5,
            realized_correct: true,
            g_features: f,
        }
    }

    #[test]
    fn zero_model_scores_half() {
        let m = ReliabilityModel::<f64>::zeros(3, 12);
        assert_eq!(m.score(&[0.3, 0.9, -1.0], 4).unwrap(), 0.5);
    }

    #[test]
    fn score_is_sigmoid_of_augmented_dot() {
        let w = vec![0.5, -1.0, 2.0, 0.25, -0.1];
        let m = ReliabilityModel::from_weights(w.clone(), 4).unwrap();
        let f = [0.2, 0.4, 0.8];
        let z: f64 = w[0] * f[0] + w[1] * f[1] + w[2] * f[2] + w[3] * (3.0 / 4.0) + w[4];
        let expected = 1.0 / (1.0 + (-z).exp());
        assert!((m.score(&f, 3).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn score_rejects_bad_inputs() {
        let m = ReliabilityModel::<f64>::zeros(3, 12);
        assert!(matches!(
            m.score(&[0.1, 0.2], 1),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
        assert!(m.score(&[0.1, 0.2, 0.3], 0).is_err());
        assert!(m.score(&[0.1, 0.2, 0.3], 13).is_err());
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(coverage_of_scores(&[0.9, 0.9, 0.9]).unwrap(), 1.0);
        assert_eq!(coverage_of_scores(&[0.4, 0.6]).unwrap(), 0.5);
        assert!(coverage_of_scores::<f64>(&[]).is_err());
        let zero = ReliabilityModel::<f64>::zeros(3, 2);
        let batch = [outcome(1, [0.1, 0.5, 0.3]), outcome(2, [0.9, 1.0, -0.2])];
        assert_eq!(coverage(&zero, &batch).unwrap(), 1.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        assert!((auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap() - 0.75).abs() < 1e-15);
        assert!(auc(&[0.1], &[true]).is_err());
    }

    #[test]
    fn compute_c_examples() {
        let mut flags = vec![vec![true, false, true]; 7];
        flags.extend(vec![vec![false, false, true]; 3]);
        let c = compute_c::<f64, _>(&flags).unwrap();
        assert!((c.values()[0] - 0.7).abs() < 1e-15);
        assert_eq!(c.values()[1], 0.0);
        assert_eq!(c.values()[2], 1.0);
        assert!(compute_c::<f64, Vec<bool>>(&[]).is_err());
        assert!(compute_c::<f64, _>(&[vec![true], vec![true, false]]).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let w = vec![0.1 + 0.2, -1.0 / 3.0, 1e-300, 123456.789, f64::MIN_POSITIVE];
        let m = ReliabilityModel::from_weights(w, 12).unwrap();
        let back = ReliabilityModel::<f64>::from_json(&m.to_json().unwrap()).unwrap();
        for (a, b) in m.weights().iter().zip(back.weights()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back, m);
    }

    #[test]
    fn json_rejects_unknown_version() {
        let s = r#"{"version":2,"num_layers":3,"weights":[0.0,0.0,0.0]}"#;
        assert!(ReliabilityModel::<f64>::from_json(s).is_err());
    }
}
