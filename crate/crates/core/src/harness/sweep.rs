//! Parameter sweeps over lambda, epsilon, fixed threshold or reward variant.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bandit::RewardVariant;
use crate::error::{Error, Result};

use super::config::{ExperimentConfig, LambdaSetting, PolicySpec};
use super::experiment::{prepare_head, run_prepared, Aggregate, Prepared};

/// Base experiment plus one or more axes; set axes are combined as a
/// cartesian product in the order lambda, epsilon, tau, variant.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    pub lambda: Option<Vec<f64>>,
    pub epsilon: Option<Vec<f64>>,
    /// Runs a fixed-threshold policy at each value (must be on the grid).
    pub tau: Option<Vec<f64>>,
    pub variant: Option<Vec<RewardVariant>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub tau: Option<f64>,
    pub variant: Option<RewardVariant>,
}

impl SweepPoint {
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        if let Some(l) = self.lambda {
            c.lambda = LambdaSetting::Value(l);
        }
        if let Some(e) = self.epsilon {
            c.epsilon = e;
            if self.lambda.is_none() {
                c.lambda = LambdaSetting::auto();
            }
        }
        if let Some(t) = self.tau {
            c.policy = PolicySpec::Fixed(t);
        }
        if let Some(v) = self.variant {
            c.variant = v;
            c.criterion = None;
        }
        c.write_traces = false;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub lambda: f64,
    pub aggregate: Aggregate,
}

fn axis<T: Copy>(name: &str, v: &Option<Vec<T>>) -> Result<Vec<Option<T>>> {
    match v {
        None => Ok(vec![None]),
        Some(xs) if xs.is_empty() => Err(Error::Config(format!("sweep axis `{name}` is empty"))),
        Some(xs) => Ok(xs.iter().copied().map(Some).collect()),
    }
}

impl SweepConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.points()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        if self.lambda.is_none() && self.epsilon.is_none() && self.tau.is_none() && self.variant.is_none() {
            return Err(Error::Config("sweep needs at least one of lambda, epsilon, tau, variant".into()));
        }
        let mut out = Vec::new();
        for &lambda in &axis("lambda", &self.lambda)? {
            for &epsilon in &axis("epsilon", &self.epsilon)? {
                for &tau in &axis("tau", &self.tau)? {
                    for &variant in &axis("variant", &self.variant)? {
                        let p = SweepPoint { lambda, epsilon, tau, variant };
                        p.apply(&self.base).validate()?;
                        out.push(p);
                    }
                }
            }
        }
        Ok(out)
    }
}

pub const SWEEP_COLUMNS: [&str; 8] = [
    "empirical_risk",
    "speedup",
    "mean_exit_layer",
    "cumulative_regret",
    "regret_per_round",
    "mean_reward",
    "oracle_threshold",
    "delta1_hat",
];

/// Runs every point; the head is trained once and shared.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    let points = cfg.points()?;
    let head = prepare_head(&cfg.base)?;
    points
        .into_iter()
        .map(|point| {
            let c = point.apply(&cfg.base);
            let prepared = Prepared::with_head(&c, head.clone())?;
            let out = run_prepared(&prepared, None, false)?;
            Ok(SweepRow {
                point,
                lambda: c.lambda_value()?,
                aggregate: out.aggregate,
            })
        })
        .collect()
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["lambda", "epsilon", "tau", "variant", "policy", "seeds"];
    for c in SWEEP_COLUMNS {
        header.push(c);
    }
    let stds: Vec<String> = SWEEP_COLUMNS.iter().map(|c| format!("{c}_std")).collect();
    header.extend(stds.iter().map(String::as_str));
    w.write_record(&header)?;
    for r in rows {
        let a = &r.aggregate;
        let mut rec = vec![
            r.lambda.to_string(),
            opt(r.point.epsilon),
            opt(r.point.tau),
            opt(r.point.variant.map(RewardVariant::name)),
            a.policy.clone(),
            a.seeds.len().to_string(),
        ];
        rec.extend(SWEEP_COLUMNS.iter().map(|c| opt(a.mean.get(*c))));
        rec.extend(SWEEP_COLUMNS.iter().map(|c| opt(a.std.get(*c))));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<sweep writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_are_a_product() {
        let c = SweepConfig::from_json(r#"{"lambda": [0.0, 0.01], "variant": ["full", "product_only", "confidence_only"]}"#)
            .unwrap();
        let p = c.points().unwrap();
        assert_eq!(p.len(), 6);
        assert_eq!(p[0].lambda, Some(0.0));
        assert_eq!(p[5].variant, Some(RewardVariant::ConfidenceOnly));
    }

    #[test]
    fn empty_or_missing_axes_are_errors() {
        assert!(SweepConfig::from_json("{}").is_err());
        assert!(SweepConfig::from_json(r#"{"lambda": []}"#).is_err());
        assert!(SweepConfig::from_json(r#"{"tau": [0.73]}"#).is_err());
    }

    #[test]
    fn epsilon_point_resets_lambda_to_auto() {
        let base = ExperimentConfig {
            lambda: LambdaSetting::Value(0.5),
            ..Default::default()
        };
        let c = SweepPoint { epsilon: Some(0.12), ..Default::default() }.apply(&base);
        assert!((c.lambda_value().unwrap() - 0.01).abs() < 1e-15);
    }
}
