//! Per-seed runs, persistence and cross-seed aggregation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::{play, Policy, RunSpec, RunTrace, UcbPolicy};
use crate::baselines::{oracle_best_arm, ArmMeans, FinalLayerPolicy, FixedPolicy, RandomPolicy};
use crate::env::{ShiftSchedule, ThresholdGrid};
use crate::error::{Error, Result};
use crate::metrics::{annotate_regret, summarize, RunSummary};
use crate::reliability::{
    auc, compute_c_from_samples, coverage_of_scores, train, ReliabilityModel, TrainingSet,
};
use crate::sim::{stream, GeneratorParams, SampleSource, SyntheticStream};

use super::config::{ExperimentConfig, PolicySpec};
use super::trace::write_trace;

/// Key mixed into the random policy's seed so it never shares a keystream with
/// the sample stream.
const RANDOM_POLICY_KEY: u64 = 0x5EED_0FA1_2B00;

/// What `train-g` reports besides the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub model: ReliabilityModel<f64>,
    pub coverage_targets: Vec<f64>,
    /// Exact-indicator coverage per exit on the validation samples.
    pub coverage: Vec<f64>,
    pub validation_auc: f64,
    pub calibration_scale: f64,
    pub calibration_offset: f64,
    pub final_loss: f64,
    pub epochs: usize,
}

/// Trains the reliability head on fresh samples from the config's first
/// generator segment; `c_i` come from a separate validation draw.
pub fn train_head(cfg: &ExperimentConfig) -> Result<HeadReport> {
    let r = &cfg.reliability;
    let sched = ShiftSchedule::constant(cfg.generator.clone());
    let train_samples = stream::<f64>(&sched, r.train_samples, r.seed)?;
    let validation = stream::<f64>(&sched, r.validation_samples, r.seed.wrapping_add(1))?;
    let targets = compute_c_from_samples(&validation)?;
    let head = train(&TrainingSet::from_samples(&train_samples)?, &targets, &r.hyperparams)?;
    let l = cfg.generator.num_layers;
    let mut coverage = Vec::with_capacity(l);
    let mut scores = Vec::with_capacity(l * validation.len());
    let mut labels = Vec::with_capacity(l * validation.len());
    for i in 1..=l {
        let g: Vec<f64> = validation
            .iter()
            .map(|s| head.model.score_outcome(s.layer(i)))
            .collect::<Result<_>>()?;
        coverage.push(coverage_of_scores(&g)?);
        labels.extend(validation.iter().map(|s| s.layer(i).realized_correct));
        scores.extend(g);
    }
    Ok(HeadReport {
        validation_auc: auc(&scores, &labels)?,
        coverage_targets: targets.values().to_vec(),
        coverage,
        calibration_scale: head.calibration.0,
        calibration_offset: head.calibration.1,
        final_loss: *head.loss_history.last().expect("at least one epoch"),
        epochs: head.loss_history.len(),
        model: head.model,
    })
}

/// Loads, trains, or skips the head as configured.
pub fn prepare_head(cfg: &ExperimentConfig) -> Result<Option<ReliabilityModel<f64>>> {
    let r = &cfg.reliability;
    if !r.enabled {
        return Ok(None);
    }
    let model = match &r.model_path {
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            ReliabilityModel::from_json(&s)?
        }
        None => train_head(cfg)?.model,
    };
    if model.num_layers() != cfg.generator.num_layers {
        return Err(Error::Config(format!(
            "reliability model has {} layers, generator has {}",
            model.num_layers(),
            cfg.generator.num_layers
        )));
    }
    Ok(Some(model))
}

/// Everything needed to run a seed, resolved once per experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub schedule: ShiftSchedule<GeneratorParams>,
    pub grid: ThresholdGrid<f64>,
    pub spec: RunSpec<f64>,
    pub head: Option<ReliabilityModel<f64>>,
    /// Oracle over the shared pool when reshuffling.
    pool_means: Option<ArmMeans<f64>>,
}

impl Prepared {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let head = prepare_head(config)?;
        Self::with_head(config, head)
    }

    pub fn with_head(config: &ExperimentConfig, head: Option<ReliabilityModel<f64>>) -> Result<Self> {
        config.validate()?;
        let mut p = Self {
            schedule: config.schedule()?,
            grid: config.grid.build()?,
            spec: config.run_spec()?,
            config: config.clone(),
            head,
            pool_means: None,
        };
        if config.reshuffle {
            let pool = p.base_stream(config.pool_seed)?;
            p.pool_means = Some(oracle_best_arm(&p.grid, &pool, &p.spec)?);
        }
        Ok(p)
    }

    fn base_stream(&self, seed: u64) -> Result<SyntheticStream<f64>> {
        let s = SyntheticStream::new(self.schedule.clone(), self.config.num_rounds, seed)?;
        match &self.head {
            Some(m) => s.with_scorer(m.clone()),
            None => Ok(s),
        }
    }

    /// Stream seen by run `seed`.
    pub fn stream(&self, seed: u64) -> Result<SyntheticStream<f64>> {
        if self.config.reshuffle {
            Ok(self.base_stream(self.config.pool_seed)?.reshuffled(seed))
        } else {
            self.base_stream(seed)
        }
    }

    /// Oracle means for run `seed`'s stream.
    pub fn means(&self, seed: u64) -> Result<ArmMeans<f64>> {
        match &self.pool_means {
            Some(m) => Ok(m.clone()),
            None => oracle_best_arm(&self.grid, &self.stream(seed)?, &self.spec),
        }
    }

    pub fn policy(&self, spec: &PolicySpec, seed: u64) -> Result<Box<dyn Policy<f64>>> {
        Ok(match spec {
            PolicySpec::Uat => Box::new(UcbPolicy::new(
                self.grid.len(),
                self.config.ucb,
                self.config.num_rounds as u64,
            )?),
            PolicySpec::Random => Box::new(RandomPolicy::new(self.grid.len(), seed ^ RANDOM_POLICY_KEY)?),
            PolicySpec::Final => Box::new(FinalLayerPolicy),
            PolicySpec::Fixed(t) => Box::new(FixedPolicy::new(&self.grid, *t)?),
            PolicySpec::FixedArm(a) => Box::new(FixedPolicy::from_arm(&self.grid, *a)?),
        })
    }

    /// Plays `policy` on run `seed`'s stream against precomputed oracle means.
    pub fn run_with_means(
        &self,
        policy: &PolicySpec,
        seed: u64,
        means: &ArmMeans<f64>,
    ) -> Result<(RunTrace<f64>, RunSummary)> {
        let source = self.stream(seed)?;
        let mut p = self.policy(policy, seed)?;
        let mut trace = play(p.as_mut(), &self.grid, &source, &self.spec)?;
        trace.policy = policy.label();
        annotate_regret(&mut trace, means)?;
        let summary = summarize(&trace, means, &self.spec, self.config.calibration_tol)?;
        Ok((trace, summary))
    }

    pub fn run_seed(&self, policy: &PolicySpec, seed: u64) -> Result<(RunTrace<f64>, RunSummary)> {
        let means = self.means(seed)?;
        self.run_with_means(policy, seed, &means)
    }
}

/// Mean and sample standard deviation of every scalar summary field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub policy: String,
    pub seeds: Vec<u64>,
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
}

impl Aggregate {
    pub fn from_summaries(policy: &str, seeds: &[u64], summaries: &[RunSummary]) -> Result<Self> {
        if summaries.is_empty() {
            return Err(Error::Empty("summaries"));
        }
        let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for s in summaries {
            let serde_json::Value::Object(map) = serde_json::to_value(s)? else {
                unreachable!("summaries serialize as objects")
            };
            for (k, v) in map {
                let x = match v {
                    serde_json::Value::Number(n) => n.as_f64(),
                    serde_json::Value::Bool(b) => Some(f64::from(u8::from(b))),
                    _ => None,
                };
                if let Some(x) = x {
                    columns.entry(k).or_default().push(x);
                }
            }
        }
        let mut mean = BTreeMap::new();
        let mut std = BTreeMap::new();
        for (k, xs) in columns {
            let n = xs.len() as f64;
            let m = xs.iter().sum::<f64>() / n;
            let sd = if xs.len() > 1 {
                (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            mean.insert(k.clone(), m);
            std.insert(k, sd);
        }
        Ok(Self {
            policy: policy.into(),
            seeds: seeds.to_vec(),
            mean,
            std,
        })
    }

    pub fn get(&self, field: &str) -> Option<f64> {
        self.mean.get(field).copied()
    }
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub summary: RunSummary,
    pub trace: Option<RunTrace<f64>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub runs: Vec<SeedRun>,
    pub aggregate: Aggregate,
    pub files: Vec<PathBuf>,
}

pub fn trace_file_name(policy: &str, seed: u64) -> String {
    format!("trace-{policy}-seed{seed}.csv")
}

pub fn summary_file_name(policy: &str, seed: u64) -> String {
    format!("summary-{policy}-seed{seed}.json")
}

pub fn aggregate_file_name(policy: &str) -> String {
    format!("aggregate-{policy}.json")
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

/// Runs every seed of `prepared.config` (concurrently), writing one trace and
/// one summary per seed plus an aggregate when `out_dir` is given.
pub fn run_prepared(prepared: &Prepared, out_dir: Option<&Path>, keep_traces: bool) -> Result<ExperimentOutput> {
    let cfg = &prepared.config;
    let label = cfg.policy.label();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let results: Vec<(SeedRun, Vec<PathBuf>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let (trace, summary) = prepared.run_seed(&cfg.policy, seed)?;
            let mut files = Vec::new();
            if let Some(dir) = out_dir {
                if cfg.write_traces {
                    let p = dir.join(trace_file_name(&label, seed));
                    write_trace(&trace, &p)?;
                    files.push(p);
                }
                let p = dir.join(summary_file_name(&label, seed));
                write_json(&summary, &p)?;
                files.push(p);
            }
            Ok((
                SeedRun {
                    seed,
                    summary,
                    trace: keep_traces.then_some(trace),
                },
                files,
            ))
        })
        .collect::<Result<_>>()?;
    let mut runs = Vec::with_capacity(results.len());
    let mut files = Vec::new();
    for (r, f) in results {
        runs.push(r);
        files.extend(f);
    }
    let summaries: Vec<RunSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    let aggregate = Aggregate::from_summaries(&label, &cfg.seeds, &summaries)?;
    if let Some(dir) = out_dir {
        let p = dir.join(aggregate_file_name(&label));
        write_json(&aggregate, &p)?;
        files.push(p);
    }
    Ok(ExperimentOutput { runs, aggregate, files })
}

/// Prepares the head and runs the configured experiment.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentOutput> {
    let out_dir = out_dir.or(cfg.output_dir.as_deref());
    run_prepared(&Prepared::new(cfg)?, out_dir, false)
}

/// Total rounds of `source` in `[from, to]` (1-based, inclusive) as a slice of rows.
pub fn rows_between<F: crate::Real>(trace: &RunTrace<F>, from: usize, to: usize) -> RunTrace<F> {
    RunTrace {
        policy: trace.policy.clone(),
        num_layers: trace.num_layers,
        grid: trace.grid.clone(),
        rows: trace
            .rows
            .iter()
            .filter(|r| r.round >= from && r.round <= to)
            .copied()
            .collect(),
    }
}

/// Samples of `source` as materialised rows; handy for small offline checks.
pub fn materialize<S: SampleSource<f64> + ?Sized>(source: &S) -> Vec<crate::Sample> {
    (1..=source.num_rounds()).map(|t| source.sample(t).into_owned()).collect()
}
