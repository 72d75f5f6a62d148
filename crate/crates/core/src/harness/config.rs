//! JSON experiment configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandit::{lambda_from_epsilon, RewardParams, RewardVariant, RunSpec, UcbConfig};
use crate::env::{ShiftSchedule, ThresholdGrid};
use crate::error::{Error, Result};
use crate::exit::ExitCriterion;
use crate::metrics::DEFAULT_CALIBRATION_TOL;
use crate::reliability::TrainHyperparams;
use crate::sim::GeneratorParams;

/// Default tolerance `epsilon`.
pub const DEFAULT_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Whether `lower` itself is a candidate.
    pub include_lower: bool,
    /// Explicit thresholds; overrides the other fields when set.
    pub values: Option<Vec<f64>>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lower: 0.5,
            upper: 1.0,
            count: 10,
            include_lower: true,
            values: None,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<ThresholdGrid<f64>> {
        match &self.values {
            Some(v) => ThresholdGrid::new(v.clone()),
            None => ThresholdGrid::equally_spaced(self.lower, self.upper, self.count, self.include_lower),
        }
    }
}

/// `"auto"` (epsilon / L) or an explicit value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSetting {
    Value(f64),
    Named(String),
}

impl Default for LambdaSetting {
    fn default() -> Self {
        Self::Named("auto".into())
    }
}

impl LambdaSetting {
    pub fn auto() -> Self {
        Self::default()
    }

    pub fn resolve(&self, epsilon: f64, num_layers: usize) -> Result<f64> {
        match self {
            Self::Value(v) if *v >= 0.0 && v.is_finite() => Ok(*v),
            Self::Value(v) => Err(Error::Config(format!("lambda {v} must be finite and >= 0"))),
            Self::Named(s) if s == "auto" => lambda_from_epsilon(epsilon, num_layers),
            Self::Named(s) => Err(Error::Config(format!("lambda must be a number or \"auto\", got \"{s}\""))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    #[default]
    Uat,
    Random,
    Final,
    /// Fixed threshold; must be on the grid.
    Fixed(f64),
    /// Fixed threshold given by arm index.
    FixedArm(usize),
}

impl PolicySpec {
    /// Short name used in file names.
    pub fn label(&self) -> String {
        match self {
            Self::Uat => "uat".into(),
            Self::Random => "random".into(),
            Self::Final => "final".into(),
            Self::Fixed(t) => format!("fixed{t:.4}"),
            Self::FixedArm(a) => format!("fixedarm{a}"),
        }
    }
}

impl std::str::FromStr for PolicySpec {
    type Err = Error;

    /// `uat`, `random`, `final`, `fixed:<tau>` or `fixed-arm:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown policy `{s}` (uat | random | final | fixed:<tau> | fixed-arm:<k>)"));
        match s {
            "uat" => Ok(Self::Uat),
            "random" => Ok(Self::Random),
            "final" => Ok(Self::Final),
            _ => {
                if let Some(t) = s.strip_prefix("fixed:") {
                    t.parse().map(Self::Fixed).map_err(|_| bad())
                } else if let Some(a) = s.strip_prefix("fixed-arm:") {
                    a.parse().map(Self::FixedArm).map_err(|_| bad())
                } else {
                    Err(bad())
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shift {
    pub start_round: usize,
    pub generator: GeneratorParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReliabilityConfig {
    /// Without a head every layer has `C_g = 0.5`.
    pub enabled: bool,
    /// Load weights instead of training.
    pub model_path: Option<PathBuf>,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub seed: u64,
    pub hyperparams: TrainHyperparams,
}

impl Default for ReliabilityConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            model_path: None,
            train_samples: 4000,
            validation_samples: 2000,
            seed: 1_000_000,
            hyperparams: TrainHyperparams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Generator for rounds before the first shift.
    pub generator: GeneratorParams,
    pub shifts: Vec<Shift>,
    pub grid: GridSpec,
    pub ucb: UcbConfig<f64>,
    pub epsilon: f64,
    pub lambda: LambdaSetting,
    pub variant: RewardVariant,
    /// Defaults to the variant's own criterion.
    pub criterion: Option<ExitCriterion>,
    pub policy: PolicySpec,
    pub num_rounds: usize,
    pub seeds: Vec<u64>,
    /// Replay one fixed pool of samples (generated from `pool_seed`) in a
    /// per-seed order instead of a fresh stream per seed.
    pub reshuffle: bool,
    pub pool_seed: u64,
    pub reliability: ReliabilityConfig,
    pub calibration_tol: f64,
    pub output_dir: Option<PathBuf>,
    pub write_traces: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorParams::default(),
            shifts: Vec::new(),
            grid: GridSpec::default(),
            ucb: UcbConfig::default(),
            epsilon: DEFAULT_EPSILON,
            lambda: LambdaSetting::auto(),
            variant: RewardVariant::Full,
            criterion: None,
            policy: PolicySpec::Uat,
            num_rounds: 50_000,
            seeds: vec![0],
            reshuffle: false,
            pool_seed: 0,
            reliability: ReliabilityConfig::default(),
            calibration_tol: DEFAULT_CALIBRATION_TOL,
            output_dir: None,
            write_traces: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn schedule(&self) -> Result<ShiftSchedule<GeneratorParams>> {
        let mut segments = vec![(1, self.generator.clone())];
        segments.extend(self.shifts.iter().map(|s| (s.start_round, s.generator.clone())));
        ShiftSchedule::new(segments)
    }

    pub fn lambda_value(&self) -> Result<f64> {
        self.lambda.resolve(self.epsilon, self.generator.num_layers)
    }

    pub fn run_spec(&self) -> Result<RunSpec<f64>> {
        let reward = RewardParams::new(self.lambda_value()?, self.generator.num_layers, self.variant)?;
        Ok(RunSpec {
            reward,
            criterion: self.criterion.unwrap_or_else(|| self.variant.natural_criterion()),
        })
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        let schedule = self.schedule()?;
        for (_, p) in schedule.segments() {
            p.validate()?;
            if p.num_layers != self.generator.num_layers {
                return Err(Error::Config("every shift must keep num_layers".into()));
            }
        }
        let grid = self.grid.build()?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon {} not in (0, 1)", self.epsilon)));
        }
        self.run_spec()?;
        if !(self.ucb.gamma >= 0.0 && self.ucb.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma {} must be finite and >= 0", self.ucb.gamma)));
        }
        match self.policy {
            PolicySpec::Fixed(t) if grid.arm_of(t).is_none() => {
                return Err(Error::Config(format!(
                    "fixed threshold {t} is not on the grid {:?}",
                    grid.values()
                )))
            }
            PolicySpec::FixedArm(a) if a >= grid.len() => {
                return Err(Error::UnknownArm { arm: a, len: grid.len() })
            }
            _ => {}
        }
        if self.num_rounds == 0 {
            return Err(Error::Config("num_rounds must be at least 1".into()));
        }
        if self.num_rounds > u32::MAX as usize {
            return Err(Error::Config("num_rounds too large".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if !(self.calibration_tol > 0.0 && self.calibration_tol < 1.0) {
            return Err(Error::Config(format!("calibration_tol {} not in (0, 1)", self.calibration_tol)));
        }
        let r = &self.reliability;
        if r.enabled && r.model_path.is_none() {
            if r.train_samples == 0 || r.validation_samples == 0 {
                return Err(Error::Config("reliability sample counts must be positive".into()));
            }
            r.hyperparams.validate()?;
        }
        Ok(())
    }
}
