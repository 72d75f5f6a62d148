//! Training objective for the reliability head.
//!
//! Per exit `i`:
//!
//! ```text
//! L_i = mean_k[ CE_k * (1 + g_k) ] + max(0, c_i - phi_i)^2
//! ```
//!
//! where `phi_i` is the fraction of exit-`i` samples with `g >= 0.5`. Exits are
//! combined with depth weights: `L = sum_i i * L_i / sum_i i`.
//!
//! The indicator inside `phi_i` has no useful gradient, so the objective used
//! for training replaces it with `mean_k sigmoid(k * (g_k - 0.5))`
//! (sharpness `k`, default [`DEFAULT_SHARPNESS`]). Reported coverage always
//! uses the exact indicator.

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::train::TrainingSet;
use super::CoverageTargets;

/// Sharpness of the sigmoid standing in for the coverage indicator.
pub const DEFAULT_SHARPNESS: f64 = 50.0;

/// `max(0, a)^2`.
#[inline]
pub fn hinge_sq<F: Real>(a: F) -> F {
    let m = a.max(F::zero());
    m * m
}

#[inline]
pub(crate) fn per_exit_loss_unchecked<F: Real>(ce: F, g: F, c: F, cov: F) -> F {
    ce * (F::one() + g) + hinge_sq(c - cov)
}

/// One sample's contribution at one exit: `ce * (1 + g) + hinge_sq(c - cov)`.
pub fn per_exit_loss<F: Real>(ce: F, g_val: F, c_i: F, cov: F) -> Result<F> {
    if !(ce >= F::zero()) || !ce.is_finite() {
        return Err(Error::OutOfRange {
            what: "cross-entropy",
            value: ce.to_f64_lossy(),
        });
    }
    if !(g_val > F::zero() && g_val < F::one()) {
        return Err(Error::OutOfRange {
            what: "reliability score",
            value: g_val.to_f64_lossy(),
        });
    }
    if !(cov >= F::zero() && cov <= F::one()) {
        return Err(Error::OutOfRange {
            what: "coverage",
            value: cov.to_f64_lossy(),
        });
    }
    Ok(per_exit_loss_unchecked(ce, g_val, c_i, cov))
}

/// Depth-weighted mean `sum_i i * L_i / sum_i i` over exits `1..=L`.
pub fn aggregate_loss<F: Real>(per_exit: &[F], num_layers: usize) -> Result<F> {
    if per_exit.is_empty() {
        return Err(Error::Empty("per-exit losses"));
    }
    if per_exit.len() != num_layers {
        return Err(Error::DimensionMismatch {
            expected: num_layers,
            got: per_exit.len(),
        });
    }
    let (num, den) = per_exit
        .iter()
        .enumerate()
        .fold((F::zero(), F::zero()), |(num, den), (k, l)| {
            let w = F::from_count(k as u64 + 1);
            (num + w * *l, den + w)
        });
    Ok(num / den)
}

/// Value and gradient of the smoothed objective at some weights.
#[derive(Debug, Clone)]
pub struct Objective<F: Real> {
    pub loss: F,
    pub gradient: Vec<F>,
    pub per_exit: Vec<F>,
    /// Smoothed coverage per exit.
    pub smooth_coverage: Vec<F>,
}

/// Smoothed objective and its analytic gradient with respect to `weights`.
pub fn objective<F: Real>(
    weights: &[F],
    data: &TrainingSet<F>,
    targets: &CoverageTargets<F>,
    sharpness: F,
) -> Result<Objective<F>> {
    let d = data.stride();
    if weights.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: weights.len(),
        });
    }
    if targets.len() != data.num_layers() {
        return Err(Error::DimensionMismatch {
            expected: data.num_layers(),
            got: targets.len(),
        });
    }
    let half = F::lit(0.5);
    let two = F::lit(2.0);
    let mut per_exit = Vec::with_capacity(data.num_layers());
    let mut smooth_coverage = Vec::with_capacity(data.num_layers());
    let mut gradient = vec![F::zero(); d];
    let mut weight_sum = F::zero();

    let mut grad_ce = vec![F::zero(); d];
    let mut grad_phi = vec![F::zero(); d];
    for (exit, c_i) in data.exits().iter().zip(targets.values()) {
        grad_ce.iter_mut().for_each(|v| *v = F::zero());
        grad_phi.iter_mut().for_each(|v| *v = F::zero());
        let n = F::from_count(exit.len() as u64);
        let mut ce_term = F::zero();
        let mut phi = F::zero();
        for (x, ce) in exit.rows() {
            let z = x.iter().zip(weights).fold(F::zero(), |acc, (a, b)| acc + *a * *b);
            let g = z.sigmoid();
            let dg = g * (F::one() - g);
            let s = (sharpness * (g - half)).sigmoid();
            let ds = sharpness * s * (F::one() - s) * dg;
            ce_term = ce_term + ce * (F::one() + g);
            phi = phi + s;
            for ((gc, gp), xj) in grad_ce.iter_mut().zip(grad_phi.iter_mut()).zip(x) {
                *gc = *gc + ce * dg * *xj;
                *gp = *gp + ds * *xj;
            }
        }
        let cov = phi / n;
        let shortfall = (*c_i - cov).max(F::zero());
        let loss_i = ce_term / n + hinge_sq(*c_i - cov);
        let w = F::from_count(exit.layer() as u64);
        for ((g, gc), gp) in gradient.iter_mut().zip(&grad_ce).zip(&grad_phi) {
            *g = *g + w * (*gc / n - two * shortfall * *gp / n);
        }
        weight_sum = weight_sum + w;
        per_exit.push(loss_i);
        smooth_coverage.push(cov);
    }
    gradient.iter_mut().for_each(|g| *g = *g / weight_sum);
    let loss = aggregate_loss(&per_exit, data.num_layers())?;
    if !loss.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "reliability objective: loss {loss}, per-exit {per_exit:?}"
        )));
    }
    Ok(Objective {
        loss,
        gradient,
        per_exit,
        smooth_coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_sq(-0.1_f64), 0.0);
        assert!((hinge_sq(0.2_f64) - 0.04).abs() < 1e-15);
        assert_eq!(hinge_sq(0.0_f64), 0.0);
    }

    #[test]
    fn per_exit_examples() {
        assert!((per_exit_loss::<f64>(0.5, 0.4, 0.8, 0.9).unwrap() - 0.7).abs() < 1e-12);
        assert!((per_exit_loss::<f64>(0.5, 0.4, 0.8, 0.6).unwrap() - 0.74).abs() < 1e-12);
        assert!((per_exit_loss::<f64>(0.0, 0.4, 0.8, 0.6).unwrap() - 0.04).abs() < 1e-12);
    }

    #[test]
    fn per_exit_preconditions() {
        assert!(per_exit_loss::<f64>(-0.1, 0.4, 0.8, 0.6).is_err());
        assert!(per_exit_loss::<f64>(0.1, 0.0, 0.8, 0.6).is_err());
        assert!(per_exit_loss::<f64>(0.1, 1.0, 0.8, 0.6).is_err());
        assert!(per_exit_loss::<f64>(0.1, 0.4, 0.8, 1.2).is_err());
    }

    #[test]
    fn aggregate_examples() {
        assert!((aggregate_loss::<f64>(&[1.0, 0.5], 2).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((aggregate_loss::<f64>(&[0.3; 7], 7).unwrap() - 0.3).abs() < 1e-15);
        assert!((aggregate_loss::<f64>(&[0.0, 0.0, 3.0], 3).unwrap() - 1.5).abs() < 1e-15);
        assert!(aggregate_loss::<f64>(&[], 0).is_err());
        assert!(aggregate_loss::<f64>(&[1.0], 2).is_err());
    }
}
