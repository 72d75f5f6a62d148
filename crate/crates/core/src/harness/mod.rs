//! Config-driven experiments, sweeps, trace analysis and timing.

pub mod analyze;
pub mod bench;
pub mod config;
pub mod experiment;
pub mod sweep;
pub mod trace;

pub use analyze::{analyze_dir, write_series, RegretSeries};
pub use bench::{bench_round, BenchReport};
pub use config::{ExperimentConfig, GridSpec, LambdaSetting, PolicySpec, ReliabilityConfig, Shift, DEFAULT_EPSILON};
pub use experiment::{
    run_experiment, run_prepared, train_head, Aggregate, ExperimentOutput, HeadReport, Prepared, SeedRun,
};
pub use sweep::{run_sweep, write_sweep_csv, SweepConfig, SweepPoint, SweepRow};
pub use trace::{read_trace, write_trace, TraceRecord, TRACE_HEADER};
