use serde::{Deserialize, Serialize};

use crate::env::SampleOutcomes;
use crate::error::{Error, Result};
use crate::scalar::Real;

use super::loss::{objective, DEFAULT_SHARPNESS};
use super::{CoverageTargets, ReliabilityModel};

/// Training rows of one exit, stored with the augmented layout
/// `[features.., layer / L, 1]`.
#[derive(Debug, Clone)]
pub struct ExitBatch<F: Real> {
    layer: usize,
    stride: usize,
    x: Vec<F>,
    ce: Vec<F>,
    correct: Vec<bool>,
}

impl<F: Real> ExitBatch<F> {
    pub fn new(layer: usize, feature_dim: usize) -> Self {
        Self {
            layer,
            stride: feature_dim + 2,
            x: Vec::new(),
            ce: Vec::new(),
            correct: Vec::new(),
        }
    }

    /// Appends one row; `features` excludes the depth and bias columns.
    pub fn push(&mut self, features: &[F], num_layers: usize, ce: F, correct: bool) -> Result<()> {
        if features.len() + 2 != self.stride {
            return Err(Error::DimensionMismatch {
                expected: self.stride - 2,
                got: features.len(),
            });
        }
        if !(ce >= F::zero()) || !ce.is_finite() {
            return Err(Error::OutOfRange {
                what: "cross-entropy",
                value: ce.to_f64_lossy(),
            });
        }
        self.x.extend_from_slice(features);
        self.x
            .push(F::from_count(self.layer as u64) / F::from_count(num_layers as u64));
        self.x.push(F::one());
        self.ce.push(ce);
        self.correct.push(correct);
        Ok(())
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn len(&self) -> usize {
        self.ce.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ce.is_empty()
    }

    /// `(augmented features, cross-entropy)` per row.
    pub fn rows(&self) -> impl Iterator<Item = (&[F], F)> + '_ {
        self.x.chunks_exact(self.stride).zip(self.ce.iter().copied())
    }

    pub fn labels(&self) -> &[bool] {
        &self.correct
    }
}

/// Rows grouped by exit, exits `1..=L` in order.
#[derive(Debug, Clone)]
pub struct TrainingSet<F: Real> {
    exits: Vec<ExitBatch<F>>,
}

impl<F: Real> TrainingSet<F> {
    pub fn new(exits: Vec<ExitBatch<F>>) -> Result<Self> {
        let first = exits.first().ok_or(Error::Empty("training set has no exits"))?;
        let stride = first.stride;
        for (k, e) in exits.iter().enumerate() {
            if e.layer != k + 1 {
                return Err(Error::param("layer", format!("exit #{k} has layer {}", e.layer)));
            }
            if e.stride != stride {
                return Err(Error::DimensionMismatch {
                    expected: stride,
                    got: e.stride,
                });
            }
            if e.is_empty() {
                return Err(Error::Empty("exit batch"));
            }
        }
        Ok(Self { exits })
    }

    /// One row per (sample, layer), labelled with realized correctness.
    pub fn from_samples(samples: &[SampleOutcomes<F>]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("training samples"))?;
        let l = first.num_layers();
        let mut exits: Vec<ExitBatch<F>> = (1..=l)
            .map(|i| ExitBatch::new(i, first.layer(1).g_features.len()))
            .collect();
        for s in samples {
            if s.num_layers() != l {
                return Err(Error::DimensionMismatch {
                    expected: l,
                    got: s.num_layers(),
                });
            }
            for (batch, o) in exits.iter_mut().zip(s.layers()) {
                batch.push(&o.g_features, l, o.cross_entropy(), o.realized_correct)?;
            }
        }
        Self::new(exits)
    }

    pub fn num_layers(&self) -> usize {
        self.exits.len()
    }

    /// Length of an augmented row (`feature_dim + 2`).
    pub fn stride(&self) -> usize {
        self.exits[0].stride
    }

    pub fn feature_dim(&self) -> usize {
        self.stride() - 2
    }

    pub fn exits(&self) -> &[ExitBatch<F>] {
        &self.exits
    }

    pub fn num_rows(&self) -> usize {
        self.exits.iter().map(ExitBatch::len).sum()
    }

    /// Copy with every non-bias column shifted and scaled to zero mean and unit
    /// variance, plus the `(mean, scale)` used per column. Constant columns keep
    /// scale 1.
    pub fn standardized(&self) -> (Self, Vec<(F, F)>) {
        let d = self.stride() - 1;
        let n = F::from_count(self.num_rows() as u64);
        let mut mean = vec![F::zero(); d];
        for e in &self.exits {
            for (x, _) in e.rows() {
                for (m, v) in mean.iter_mut().zip(x) {
                    *m = *m + *v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / n);
        let mut var = vec![F::zero(); d];
        for e in &self.exits {
            for (x, _) in e.rows() {
                for ((s, m), v) in var.iter_mut().zip(&mean).zip(x) {
                    *s = *s + (*v - *m) * (*v - *m);
                }
            }
        }
        let tiny = F::lit(1e-12);
        let affine: Vec<(F, F)> = mean
            .into_iter()
            .zip(var)
            .map(|(m, v)| {
                let sd = (v / n).sqrt();
                (m, if sd > tiny { sd } else { F::one() })
            })
            .collect();
        let mut out = self.clone();
        for e in &mut out.exits {
            let stride = e.stride;
            for row in e.x.chunks_exact_mut(stride) {
                for (v, (m, sd)) in row.iter_mut().zip(&affine) {
                    *v = (*v - *m) / *sd;
                }
            }
        }
        (out, affine)
    }
}

/// Maps weights learned on standardized columns back to raw columns.
fn unstandardize<F: Real>(w: &[F], affine: &[(F, F)]) -> Vec<F> {
    let d = affine.len();
    let mut out = Vec::with_capacity(w.len());
    let mut bias = w[d];
    for (wj, (m, sd)) in w[..d].iter().zip(affine) {
        out.push(*wj / *sd);
        bias = bias - *wj * *m / *sd;
    }
    out.push(bias);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyperparams {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Sharpness of the smooth coverage surrogate.
    pub sharpness: f64,
    /// Refit the logit's scale and offset on the training rows after the
    /// coverage-regularised descent, so `g` reads as a correctness probability.
    pub calibrate: bool,
}

impl Default for TrainHyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 500,
            sharpness: DEFAULT_SHARPNESS,
            calibrate: true,
        }
    }
}

impl TrainHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", format!("{} must be > 0", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be at least 1"));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(Error::param("sharpness", format!("{} must be > 0", self.sharpness)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedHead<F: Real> {
    /// Exported head (calibrated when requested).
    pub model: ReliabilityModel<F>,
    /// Head straight out of gradient descent.
    pub descent_model: ReliabilityModel<F>,
    /// Smoothed objective before each epoch's step. Entry 0 is evaluated with
    /// all targets at zero, later entries with the supplied targets.
    pub loss_history: Vec<F>,
    /// `(scale, offset)` applied to the descent logit; `(1, 0)` when uncalibrated.
    pub calibration: (F, F),
}

/// Full-batch gradient descent on the smoothed objective.
///
/// The first epoch runs with every `c_i = 0`; later epochs use `targets`.
/// Descent runs on standardized columns and the result is folded back into
/// raw-feature weights, so the model is unchanged in form.
pub fn train<F: Real>(
    data: &TrainingSet<F>,
    targets: &CoverageTargets<F>,
    hp: &TrainHyperparams,
) -> Result<TrainedHead<F>> {
    hp.validate()?;
    if targets.len() != data.num_layers() {
        return Err(Error::DimensionMismatch {
            expected: data.num_layers(),
            got: targets.len(),
        });
    }
    let lr = F::lit(hp.learning_rate);
    let sharpness = F::lit(hp.sharpness);
    let warmup = CoverageTargets::zeros(data.num_layers());
    let raw = data;
    let (data, affine) = raw.standardized();
    let data = &data;
    let mut w = vec![F::zero(); data.stride()];
    let mut loss_history = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        let c = if epoch == 0 { &warmup } else { targets };
        let obj = objective(&w, data, c, sharpness).map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("epoch {}: {msg}", epoch + 1)),
            other => other,
        })?;
        loss_history.push(obj.loss);
        for (wj, gj) in w.iter_mut().zip(&obj.gradient) {
            *wj = *wj - lr * *gj;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "epoch {}: weights diverged (loss {})",
                epoch + 1,
                obj.loss
            )));
        }
    }
    let w = unstandardize(&w, &affine);
    let data = raw;
    let descent_model = ReliabilityModel::from_weights(w.clone(), data.num_layers())?;
    let calibration = if hp.calibrate {
        calibrate_logit(&descent_model, data)?
    } else {
        (F::one(), F::zero())
    };
    let (scale, offset) = calibration;
    let mut cw: Vec<F> = w.iter().map(|v| *v * scale).collect();
    let bias = cw.len() - 1;
    cw[bias] = cw[bias] + offset;
    Ok(TrainedHead {
        model: ReliabilityModel::from_weights(cw, data.num_layers())?,
        descent_model,
        loss_history,
        calibration,
    })
}

/// Fits `(a, b)` so that `sigmoid(a * z + b)` matches the realized labels,
/// `z` being `model`'s logit. Newton's method on the (lightly ridged) log loss.
pub fn calibrate_logit<F: Real>(model: &ReliabilityModel<F>, data: &TrainingSet<F>) -> Result<(F, F)> {
    if model.weights().len() != data.stride() {
        return Err(Error::DimensionMismatch {
            expected: data.stride(),
            got: model.weights().len(),
        });
    }
    let rows: Vec<(f64, f64)> = data
        .exits()
        .iter()
        .flat_map(|e| {
            e.rows().zip(e.labels()).map(|((x, _), y)| {
                let z = x
                    .iter()
                    .zip(model.weights())
                    .fold(F::zero(), |acc, (a, b)| acc + *a * *b)
                    .to_f64_lossy();
                (z, if *y { 1.0 } else { 0.0 })
            })
        })
        .collect();
    const RIDGE: f64 = 1e-3;
    let loss = |a: f64, b: f64| -> f64 {
        let mut s = 0.5 * RIDGE * (a * a + b * b);
        for (z, y) in &rows {
            let u = a * z + b;
            // log(1 + e^u) - y u, stable
            s += u.max(0.0) + (-u.abs()).exp().ln_1p() - y * u;
        }
        s
    };
    let (mut a, mut b) = (1.0_f64, 0.0_f64);
    let mut current = loss(a, b);
    for _ in 0..100 {
        let (mut ga, mut gb) = (RIDGE * a, RIDGE * b);
        let (mut haa, mut hab, mut hbb) = (RIDGE, 0.0, RIDGE);
        for (z, y) in &rows {
            let p = (a * z + b).sigmoid();
            let r = p - y;
            let v = p * (1.0 - p);
            ga += r * z;
            gb += r;
            haa += v * z * z;
            hab += v * z;
            hbb += v;
        }
        let det = haa * hbb - hab * hab;
        if !(det > 0.0) {
            break;
        }
        let da = (hbb * ga - hab * gb) / det;
        let db = (haa * gb - hab * ga) / det;
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-10 {
            let (na, nb) = (a - step * da, b - step * db);
            let nl = loss(na, nb);
            if nl <= current {
                a = na;
                b = nb;
                accepted = current - nl > 1e-12 * current.abs().max(1.0);
                current = nl;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite(format!("calibration diverged: a = {a}, b = {b}")));
    }
    Ok((F::lit(a), F::lit(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ShiftSchedule;
    use crate::reliability::{compute_c_from_samples, coverage_of_scores};
    use crate::sim::{stream, GeneratorParams};

    fn small_set(n: usize, seed: u64) -> (Vec<SampleOutcomes<f64>>, TrainingSet<f64>) {
        let p = GeneratorParams {
            reliability_signal: 0.9,
            ..GeneratorParams::default()
        };
        let s = stream::<f64>(&ShiftSchedule::constant(p), n, seed).unwrap();
        let t = TrainingSet::from_samples(&s).unwrap();
        (s, t)
    }

    #[test]
    fn zero_epochs_rejected() {
        let (s, t) = small_set(50, 1);
        let c = compute_c_from_samples(&s).unwrap();
        let hp = TrainHyperparams {
            epochs: 0,
            ..Default::default()
        };
        assert!(train(&t, &c, &hp).is_err());
        let hp = TrainHyperparams {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(train(&t, &c, &hp).is_err());
    }

    #[test]
    fn loss_is_non_increasing_with_small_rate() {
        let (s, t) = small_set(400, 2);
        let c = compute_c_from_samples(&s).unwrap();
        let hp = TrainHyperparams {
            learning_rate: 0.02,
            epochs: 200,
            calibrate: false,
            ..Default::default()
        };
        let head = train(&t, &c, &hp).unwrap();
        for k in 1..head.loss_history.len() - 1 {
            assert!(
                head.loss_history[k + 1] <= head.loss_history[k] + 1e-9,
                "epoch {k}: {} -> {}",
                head.loss_history[k],
                head.loss_history[k + 1]
            );
        }
    }

    #[test]
    fn descent_does_not_collapse() {
        let (s, t) = small_set(500, 3);
        let c = compute_c_from_samples(&s).unwrap();
        assert!(c.min() > 0.0);
        let head = train(&t, &c, &TrainHyperparams { calibrate: false, ..Default::default() }).unwrap();
        let scores: Vec<f64> = s
            .iter()
            .flat_map(|x| x.layers().iter().map(|o| head.model.score_outcome(o).unwrap()))
            .collect();
        assert!(coverage_of_scores(&scores).unwrap() > 0.0);
    }

    #[test]
    fn separable_feature_is_learned() {
        // correct iff feature 0 > 0.5; the other features are noise
        let l = 3;
        let mut exits: Vec<ExitBatch<f64>> = (1..=l).map(|i| ExitBatch::new(i, 2)).collect();
        let mut flags = Vec::new();
        let mut rng_state = 12345u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..600 {
            let mut row = Vec::new();
            for e in exits.iter_mut() {
                let f0 = next();
                let f1 = next();
                let correct = f0 > 0.5;
                let ce = if correct { 0.05 } else { 2.0 };
                e.push(&[f0, f1], l, ce, correct).unwrap();
                row.push(correct);
            }
            flags.push(row);
        }
        let data = TrainingSet::new(exits).unwrap();
        let c = crate::reliability::compute_c::<f64, _>(&flags).unwrap();
        let head = train(&data, &c, &TrainHyperparams::default()).unwrap();
        let mut right = 0;
        let mut total = 0;
        for e in data.exits() {
            for ((x, _), y) in e.rows().zip(e.labels()) {
                let g = head.model.score(&x[..2], e.layer()).unwrap();
                right += usize::from((g >= 0.5) == *y);
                total += 1;
            }
        }
        let acc = right as f64 / total as f64;
        assert!(acc >= 0.95, "accuracy {acc}");
    }
}
