//! Does training exit classifiers under the reliability objective cost
//! accuracy? A small synthetic check.
//!
//! Binary task: `x ~ N(0, I_D)`, `y ~ Bernoulli(sigmoid(scale * w* . x))`. Exit
//! `i` of `L` sees the first `ceil(D * i / L)` coordinates and has its own
//! logistic head. Two models are trained from the same start:
//!
//! * plain: depth-weighted cross-entropy;
//! * joint: depth-weighted `CE * (1 + g) + hinge_sq(c_i - phi_i)` with a shared
//!   reliability head `g` over `(confidence, i / L, 1)` trained alongside.
//!   Inputs to `g` are treated as constants when differentiating the exit heads.
//!
//! `c_i` is each exit's training accuracy from the previous epoch (zero in the
//! first epoch).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointTaskParams {
    pub num_layers: usize,
    pub feature_dim: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Multiplier on the true logit; larger is an easier task.
    pub signal_scale: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub sharpness: f64,
    pub seed: u64,
}

impl Default for JointTaskParams {
    fn default() -> Self {
        Self {
            num_layers: 4,
            feature_dim: 8,
            train_size: 4000,
            test_size: 20000,
            signal_scale: 3.0,
            epochs: 300,
            learning_rate: 0.5,
            sharpness: super::DEFAULT_SHARPNESS,
            seed: 0,
        }
    }
}

impl JointTaskParams {
    fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.feature_dim < self.num_layers {
            return Err(Error::param("feature_dim", "need feature_dim >= num_layers >= 1"));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::Empty("joint task data"));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate", "must be > 0"));
        }
        Ok(())
    }

    fn visible(&self, exit: usize) -> usize {
        (self.feature_dim * exit).div_ceil(self.num_layers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointComparison {
    /// Final-exit test accuracy of the cross-entropy-only model.
    pub plain_accuracy: f64,
    /// Final-exit test accuracy of the model trained with the reliability objective.
    pub joint_accuracy: f64,
    /// `|plain - joint|` in percentage points.
    pub gap_pp: f64,
    /// Test coverage of the jointly trained `g` per exit.
    pub joint_coverage: Vec<f64>,
}

struct Task<F> {
    x: Vec<F>,
    y: Vec<bool>,
    dim: usize,
}

impl<F: Real> Task<F> {
    fn draw(n: usize, p: &JointTaskParams, w_star: &[f64], rng: &mut ChaCha8Rng) -> Self {
        let mut x = Vec::with_capacity(n * p.feature_dim);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let mut z = 0.0;
            for w in w_star {
                let v: f64 = StandardNormal.sample(rng);
                z += w * v;
                x.push(F::lit(v));
            }
            let u: f64 = rand::Rng::random(rng);
            y.push(u < (p.signal_scale * z).sigmoid());
        }
        Self { x, y, dim: p.feature_dim }
    }

    fn row(&self, k: usize) -> &[F] {
        &self.x[k * self.dim..(k + 1) * self.dim]
    }

    fn len(&self) -> usize {
        self.y.len()
    }
}

/// Exit heads: per exit, `visible` weights plus a bias.
struct Heads<F> {
    w: Vec<Vec<F>>,
}

impl<F: Real> Heads<F> {
    fn new(p: &JointTaskParams) -> Self {
        Self {
            w: (1..=p.num_layers).map(|i| vec![F::zero(); p.visible(i) + 1]).collect(),
        }
    }

    /// Probability of class 1 at exit `i` (0-based).
    fn prob(&self, i: usize, x: &[F]) -> F {
        let w = &self.w[i];
        let d = w.len() - 1;
        let z = w[..d].iter().zip(x).fold(w[d], |acc, (a, b)| acc + *a * *b);
        z.sigmoid()
    }
}

fn cross_entropy<F: Real>(p1: F, y: bool) -> F {
    let eps = F::lit(1e-12);
    let p = if y { p1 } else { F::one() - p1 };
    -(p.max(eps)).ln()
}

fn confidence<F: Real>(p1: F) -> F {
    p1.max(F::one() - p1)
}

fn g_input<F: Real>(conf: F, exit: usize, l: usize) -> [F; 3] {
    [conf, F::from_count(exit as u64) / F::from_count(l as u64), F::one()]
}

fn dot3<F: Real>(a: &[F; 3], b: &[F; 3]) -> F {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// One full-batch step. `joint` carries the reliability head weights and the
/// current coverage targets.
fn step<F: Real>(
    heads: &mut Heads<F>,
    joint: Option<(&mut [F; 3], &[F])>,
    data: &Task<F>,
    p: &JointTaskParams,
) -> Vec<F> {
    let l = p.num_layers;
    let n = F::from_count(data.len() as u64);
    let lr = F::lit(p.learning_rate);
    let sharp = F::lit(p.sharpness);
    let half = F::lit(0.5);
    let weight_sum = F::from_count((l * (l + 1) / 2) as u64);
    let mut accuracy = Vec::with_capacity(l);
    let (v, targets) = match joint {
        Some((v, c)) => (Some(v), c),
        None => (None, &[][..]),
    };
    let v_now = v.as_ref().map(|v| **v);
    let mut grad_v = [F::zero(); 3];
    for i in 0..l {
        let depth_w = F::from_count(i as u64 + 1);
        let dim = heads.w[i].len() - 1;
        let mut grad = vec![F::zero(); dim + 1];
        let mut hits = 0u64;
        let mut ce_dg = [F::zero(); 3];
        let mut phi = F::zero();
        let mut dphi = [F::zero(); 3];
        for k in 0..data.len() {
            let x = data.row(k);
            let y = data.y[k];
            let p1 = heads.prob(i, x);
            hits += u64::from((p1 >= half) == y);
            let mut mult = F::one();
            if let Some(v) = v_now {
                let u = g_input(confidence(p1), i + 1, l);
                let g = dot3(&v, &u).sigmoid();
                let dg = g * (F::one() - g);
                let ce = cross_entropy(p1, y);
                let s = (sharp * (g - half)).sigmoid();
                let ds = sharp * s * (F::one() - s) * dg;
                for j in 0..3 {
                    ce_dg[j] = ce_dg[j] + ce * dg * u[j];
                    dphi[j] = dphi[j] + ds * u[j];
                }
                phi = phi + s;
                mult = F::one() + g;
            }
            let r = mult * (p1 - if y { F::one() } else { F::zero() });
            for (gj, xj) in grad[..dim].iter_mut().zip(x) {
                *gj = *gj + r * *xj;
            }
            grad[dim] = grad[dim] + r;
        }
        let scale = depth_w / weight_sum / n;
        for (w, gj) in heads.w[i].iter_mut().zip(&grad) {
            *w = *w - lr * scale * *gj;
        }
        if v_now.is_some() {
            let shortfall = (targets[i] - phi / n).max(F::zero());
            for j in 0..3 {
                let gj = ce_dg[j] / n - F::lit(2.0) * shortfall * dphi[j] / n;
                grad_v[j] = grad_v[j] + depth_w / weight_sum * gj;
            }
        }
        accuracy.push(F::from_count(hits) / n);
    }
    if let Some(v) = v {
        for j in 0..3 {
            v[j] = v[j] - lr * grad_v[j];
        }
    }
    accuracy
}

fn final_accuracy<F: Real>(heads: &Heads<F>, data: &Task<F>) -> f64 {
    let l = heads.w.len() - 1;
    let half = F::lit(0.5);
    let hits = (0..data.len())
        .filter(|&k| (heads.prob(l, data.row(k)) >= half) == data.y[k])
        .count();
    hits as f64 / data.len() as f64
}

/// Trains both models and compares final-exit test accuracy.
pub fn compare_joint_training<F: Real>(p: &JointTaskParams) -> Result<JointComparison> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    // decaying true weights so deeper exits see strictly more signal
    let w_star: Vec<f64> = (0..p.feature_dim).map(|j| 1.0 / (1.0 + j as f64).sqrt()).collect();
    let norm = w_star.iter().map(|w| w * w).sum::<f64>().sqrt();
    let w_star: Vec<f64> = w_star.into_iter().map(|w| w / norm).collect();
    let train: Task<F> = Task::draw(p.train_size, p, &w_star, &mut rng);
    let test: Task<F> = Task::draw(p.test_size, p, &w_star, &mut rng);

    let mut plain = Heads::new(p);
    for _ in 0..p.epochs {
        step(&mut plain, None, &train, p);
    }

    let mut joint = Heads::new(p);
    let mut v = [F::zero(); 3];
    let mut targets = vec![F::zero(); p.num_layers];
    for _ in 0..p.epochs {
        targets = step(&mut joint, Some((&mut v, &targets)), &train, p);
    }
    if v.iter().chain(joint.w.iter().flatten()).any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("joint training diverged".into()));
    }

    let half = F::lit(0.5);
    let joint_coverage = (0..p.num_layers)
        .map(|i| {
            let covered = (0..test.len())
                .filter(|&k| {
                    let u = g_input(confidence(joint.prob(i, test.row(k))), i + 1, p.num_layers);
                    dot3(&v, &u).sigmoid() >= half
                })
                .count();
            covered as f64 / test.len() as f64
        })
        .collect();
    let plain_accuracy = final_accuracy(&plain, &test);
    let joint_accuracy = final_accuracy(&joint, &test);
    Ok(JointComparison {
        plain_accuracy,
        joint_accuracy,
        gap_pp: 100.0 * (plain_accuracy - joint_accuracy).abs(),
        joint_coverage,
    })
}
