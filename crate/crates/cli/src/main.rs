use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uat_core::harness::{
    analyze::{analyze_dir, write_series},
    bench::bench_round,
    experiment::{run_experiment, train_head},
    sweep::{run_sweep, write_sweep_csv, SweepConfig},
    ExperimentConfig, PolicySpec,
};
use uat_core::Error;

const CONFIG_HELP: &str = "\
CONFIG FILE (JSON; every key optional, unknown keys are errors)
  generator                 stream parameters before the first shift
    num_layers              exits L (>= 2), default 12
    difficulty_spread       spread of per-sample difficulty (> 0), default 1
    depth_gain              how fast correctness improves with depth (> 0), default 6
    overconfidence_rate     share of samples with a confidently wrong shallow exit, default 0.12
    confidence_noise        sd of Gaussian noise on confidence (>= 0), default 0.25
    reliability_signal      how informative g_features are, in [0, 1], default 0.8
    seed                    mixed into every sample's RNG, default 0
  shifts                    list of {start_round, generator}; same num_layers required
  grid                      {lower 0.5, upper 1.0, count 10, include_lower true, values null}
                            `values` lists thresholds explicitly and wins over the rest
  ucb                       {gamma 1.4142.., bonus \"round\" | \"horizon\"}
  epsilon                   tolerance in (0, 1), default 0.01
  lambda                    number >= 0 or \"auto\" (epsilon / L), default \"auto\"
  variant                   full | confidence_only | confidence_penalized |
                            reliability_only | reliability_penalized | product_only
  criterion                 uat_score | raw_confidence | reliability_only;
                            null uses the variant's own criterion
  policy                    \"uat\" | \"random\" | \"final\" | {\"fixed\": tau} | {\"fixed_arm\": k}
  num_rounds                horizon T, default 50000
  seeds                     distinct run seeds, default [0]
  reshuffle                 replay one pool (from pool_seed) in a per-seed order, default false
  pool_seed                 default 0
  reliability               head used for C_g
    enabled                 without it C_g = 0.5 everywhere, default true
    model_path              load weights written by `train-g` instead of training
    train_samples           default 4000
    validation_samples      samples used for the per-exit targets c_i, default 2000
    seed                    default 1000000
    hyperparams             {learning_rate 0.1, epochs 500, sharpness 50, calibrate true}
  calibration_tol           band for the miscalibration estimate, default 0.2
  output_dir                used when --out is absent
  write_traces              default true

SWEEP FILE
  base                      an experiment config as above
  lambda, epsilon, tau, variant
                            value lists; set axes are crossed, empty lists are errors
";

#[derive(Parser)]
#[command(name = "uat", version, about = "Early-exit threshold bandit experiments", after_long_help = CONFIG_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON); defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single seed; overrides the config's seeds.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds; overrides the config's seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy for every seed; writes traces, summaries and an aggregate.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// uat | random | final | fixed:<tau> | fixed-arm:<k>
        #[arg(long)]
        policy: Option<PolicySpec>,
        /// Overrides num_rounds.
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Train the reliability head and write its weights and a report.
    TrainG {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a parameter sweep (sweep file) and write a CSV table.
    Sweep {
        /// Sweep config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the base config's seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Output directory; the table goes to stdout without it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average cumulative regret per policy over the traces in a directory.
    Analyze {
        /// Directory holding trace-<policy>-seed<k>.csv files.
        #[arg(long)]
        traces: PathBuf,
        /// Where series-<policy>.csv go; defaults to the trace directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time one bandit round (select + update).
    Bench {
        #[arg(long, default_value_t = 10)]
        arms: usize,
        #[arg(long, default_value_t = 100_000)]
        rounds: usize,
        #[arg(long, default_value_t = 21)]
        batches: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("values serialize"));
}

fn paths(files: &[PathBuf]) -> Vec<String> {
    files.iter().map(|p| p.display().to_string()).collect()
}

fn write_file(path: &Path, contents: String) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { run, policy, rounds } => {
            let mut cfg = run.load()?;
            if let Some(p) = policy {
                cfg.policy = p;
            }
            if let Some(t) = rounds {
                cfg.num_rounds = t;
            }
            cfg.validate()?;
            let out = run_experiment(&cfg, None)?;
            print_json(&serde_json::json!({
                "aggregate": out.aggregate,
                "files": paths(&out.files),
            }));
        }
        Command::TrainG { run } => {
            let cfg = run.load()?;
            cfg.validate()?;
            let report = train_head(&cfg)?;
            let mut files = Vec::new();
            if let Some(dir) = &cfg.output_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                let m = dir.join("reliability.json");
                write_file(&m, report.model.to_json()? + "\n")?;
                let r = dir.join("train-g-report.json");
                write_file(&r, serde_json::to_string_pretty(&report)? + "\n")?;
                files = vec![m, r];
            }
            print_json(&serde_json::json!({ "report": report, "files": paths(&files) }));
        }
        Command::Sweep { config, seeds, out } => {
            let mut cfg = SweepConfig::load(&config)?;
            if let Some(s) = seeds {
                cfg.base.seeds = s;
            }
            let rows = run_sweep(&cfg)?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
                        path: dir.clone(),
                        source: e,
                    })?;
                    let p = dir.join("sweep.csv");
                    let f = std::fs::File::create(&p).map_err(|e| Error::Io {
                        path: p.clone(),
                        source: e,
                    })?;
                    write_sweep_csv(&rows, f)?;
                    print_json(&serde_json::json!({ "rows": rows.len(), "files": [p.display().to_string()] }));
                }
                None => write_sweep_csv(&rows, std::io::stdout().lock())?,
            }
        }
        Command::Analyze { traces, out } => {
            let series = analyze_dir(&traces)?;
            let files = write_series(&series, out.as_deref().unwrap_or(&traces))?;
            let finals: serde_json::Map<String, serde_json::Value> = series
                .iter()
                .map(|s| (s.policy.clone(), serde_json::json!(s.mean.last().copied().unwrap_or(0.0))))
                .collect();
            print_json(&serde_json::json!({ "final_mean_cum_regret": finals, "files": paths(&files) }));
        }
        Command::Bench { arms, rounds, batches, seed } => {
            let r = bench_round(arms, rounds, batches, seed)?;
            print_json(&serde_json::to_value(r)?);
        }
    }
    Ok(())
}

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            error_line("usage", e.to_string().trim());
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error_line(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
